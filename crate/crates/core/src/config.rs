//! Experiment specification, read from TOML.
//!
//! Every key has a default, so an empty file describes the default
//! experiment. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::network::TrainHyper;
use crate::observation::{ObservationKind, ObservationOperator};
use crate::surrogate::{PackageConstants, TwinParams, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSettings {
    /// Base steps integrated before the first window.
    pub spinup_steps: usize,
    /// Checkpoints per window, both ends included.
    pub checkpoints: usize,
    /// Time between checkpoints.
    pub spacing: f64,
    /// Window (1-based) the error models are trained on.
    pub train_window: usize,
    /// Window the error models are evaluated on.
    pub test_window: usize,
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings {
            spinup_steps: 500,
            checkpoints: 7,
            spacing: 0.01,
            train_window: 1,
            test_window: 2,
        }
    }
}

impl WindowSettings {
    pub fn spec(&self) -> WindowSpec {
        WindowSpec {
            checkpoints: self.checkpoints,
            spacing: self.spacing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSettings {
    pub kind: ObservationKind,
    /// Observed grid points; empty means every point.
    pub indices: Vec<usize>,
    /// Standard deviation of the additive observation noise.
    pub noise_std: f64,
}

impl Default for ObservationSettings {
    fn default() -> Self {
        ObservationSettings {
            kind: ObservationKind::Subset,
            indices: Vec::new(),
            noise_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Rf,
    Nn,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 2] = [LearnerKind::Rf, LearnerKind::Nn];

    pub fn label(self) -> &'static str {
        match self {
            LearnerKind::Rf => "rf",
            LearnerKind::Nn => "nn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSettings {
    pub kind: LearnerKind,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings { kind: LearnerKind::Rf }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSettings {
    pub n_trees: usize,
    /// 0 means unlimited.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// 0 means `ceil(sqrt(n_features))`.
    pub features_per_split: usize,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestSettings {
            n_trees: p.n_trees,
            max_depth: p.max_depth.unwrap_or(0),
            min_samples_leaf: p.min_samples_leaf,
            features_per_split: 0,
        }
    }
}

impl ForestSettings {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: (self.features_per_split > 0).then_some(self.features_per_split),
            seed,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    pub hidden_width: usize,
    pub pointwise_hidden_layers: usize,
    pub norm_hidden_layers: usize,
    pub physics_hidden_layers: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        let h = TrainHyper::default();
        NetworkSettings {
            learning_rate: h.learning_rate,
            epochs: h.epochs,
            batch_size: h.batch_size,
            init_scale: h.init_scale,
            hidden_width: 32,
            pointwise_hidden_layers: 6,
            norm_hidden_layers: 4,
            physics_hidden_layers: 4,
        }
    }
}

impl NetworkSettings {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSettings {
    pub top_k: usize,
}

impl Default for NormSettings {
    fn default() -> Self {
        NormSettings { top_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSettings {
    /// Windows whose runs train the physics model.
    pub train_windows: Vec<usize>,
    /// Windows whose runs form the attribution test set.
    pub test_windows: Vec<usize>,
    /// Random configuration assignments averaged for the validation baseline.
    pub random_draws: usize,
}

impl Default for PhysicsSettings {
    fn default() -> Self {
        PhysicsSettings {
            train_windows: vec![1],
            test_windows: vec![2, 3],
            random_draws: 20,
        }
    }
}

/// Surrogate variant in which the closure package dominates the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedSettings {
    /// Fraction of the cubic coupling fit each closure option leaves out,
    /// in option order.
    pub closure_ladder: [f64; 4],
    /// Multiplies the forcing amplitudes and the extra dissipation.
    pub other_scale: f64,
}

impl Default for PlantedSettings {
    fn default() -> Self {
        PlantedSettings {
            closure_ladder: [1.0, 0.5, 0.25, 0.125],
            other_scale: 0.05,
        }
    }
}

impl PlantedSettings {
    pub fn apply(&self, base: &PackageConstants) -> PackageConstants {
        PackageConstants {
            closure_ladder: Some(self.closure_ladder),
            sine_amplitude: base.sine_amplitude * self.other_scale,
            time_amplitude: base.time_amplitude * self.other_scale,
            enhanced_dissipation: 1.0 + (base.enhanced_dissipation - 1.0) * self.other_scale,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub surrogate: TwinParams,
    pub packages: PackageConstants,
    pub windows: WindowSettings,
    pub observation: ObservationSettings,
    pub learner: LearnerSettings,
    pub forest: ForestSettings,
    pub network: NetworkSettings,
    pub norm: NormSettings,
    pub physics: PhysicsSettings,
    pub planted: PlantedSettings,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 2024,
            surrogate: TwinParams::default(),
            packages: PackageConstants::default(),
            windows: WindowSettings::default(),
            observation: ObservationSettings::default(),
            learner: LearnerSettings::default(),
            forest: ForestSettings::default(),
            network: NetworkSettings::default(),
            norm: NormSettings::default(),
            physics: PhysicsSettings::default(),
            planted: PlantedSettings::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.surrogate
            .validate()
            .map_err(|e| invalid(format!("surrogate: {e}")))?;
        self.windows
            .spec()
            .validate()
            .map_err(|e| invalid(format!("windows: {e}")))?;
        let w = &self.windows;
        if w.train_window == 0 || w.test_window <= w.train_window {
            return Err(invalid(format!(
                "windows: test_window ({}) must come strictly after train_window ({}), both 1-based",
                w.test_window, w.train_window
            )));
        }
        self.operator().map_err(|e| invalid(format!("observation: {e}")))?;
        if !(self.observation.noise_std >= 0.0 && self.observation.noise_std.is_finite()) {
            return Err(invalid("observation.noise_std must be finite and non-negative"));
        }
        if self.forest.n_trees == 0 || self.forest.min_samples_leaf == 0 {
            return Err(invalid("forest.n_trees and forest.min_samples_leaf must be at least 1"));
        }
        let n = &self.network;
        if n.hidden_width == 0
            || n.pointwise_hidden_layers == 0
            || n.norm_hidden_layers == 0
            || n.physics_hidden_layers == 0
        {
            return Err(invalid("network widths and layer counts must be at least 1"));
        }
        n.hyper(0).validate().map_err(|e| invalid(format!("network: {e}")))?;
        if self.norm.top_k == 0 {
            return Err(invalid("norm.top_k must be at least 1"));
        }
        let p = &self.physics;
        if p.train_windows.is_empty() || p.test_windows.is_empty() || p.random_draws == 0 {
            return Err(invalid("physics needs train and test windows and at least one random draw"));
        }
        if p.train_windows.iter().chain(&p.test_windows).any(|&w| w == 0) {
            return Err(invalid("physics windows are 1-based"));
        }
        if p.test_windows.iter().any(|w| p.train_windows.contains(w)) {
            return Err(invalid("physics train and test windows must not overlap"));
        }
        let pl = &self.planted;
        if !(pl.other_scale >= 0.0 && pl.other_scale.is_finite()) || pl.closure_ladder.iter().any(|v| !v.is_finite()) {
            return Err(invalid("planted.other_scale and planted.closure_ladder must be finite, other_scale non-negative"));
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<ObservationOperator> {
        let k = self.surrogate.k;
        if self.observation.indices.is_empty() {
            ObservationOperator::full(self.observation.kind, k)
        } else {
            ObservationOperator::new(self.observation.kind, self.observation.indices.clone(), k)
        }
    }

    /// Number of consecutive windows any experiment needs.
    pub fn windows_needed(&self) -> usize {
        let p = &self.physics;
        p.train_windows
            .iter()
            .chain(&p.test_windows)
            .copied()
            .chain([self.windows.test_window])
            .max()
            .unwrap_or(1)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    ExperimentSpec::from_toml(&text)
}
