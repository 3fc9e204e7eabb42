//! End-to-end experiments: pointwise error prediction and forecast
//! correction, error-norm prediction and configuration ranking, and physics
//! attribution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentSpec, LearnerKind};
use crate::dataset::{
    self, build_error_records, build_norm_records, build_physics_records, decode_config_argmax, encode_config,
    gridpoint_features, gridpoint_schema, halve_physics_features, l2_norm, norm_features, ErrorDataset, Grain,
    PhysicsDataset, Rows, Table, WindowRun,
};
use crate::error::{precondition, Error, Result};
use crate::forest::{fit_forest, fit_physics_classifier, Forest, PhysicsClassifier};
use crate::network::{fit_scaled, ScaledNetwork};
use crate::observation::{
    correct_forecast, correction_from_discrepancy, discrepancy, observe_model, observe_truth, Discrepancy,
    ModelSpaceError, Observation, ObservationOperator,
};
use crate::seed;
use crate::surrogate::{ModelState, Package, PackageConstants, PhysicsConfig, Surrogate, Trajectory, TruthState};

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != actual.len() {
        return Err(precondition(format!(
            "rmse needs equal non-zero lengths, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let sum: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

pub fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

/// 1-based ranks in ascending order; ties share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(precondition("spearman needs two equal-length series of at least 2 values"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Indices sorted by ascending value, ties by index.
pub fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// One ensemble member's forecast over one window, with its final state.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRun {
    pub run: WindowRun,
    pub final_state: ModelState,
}

/// Truth trajectory, observations and surrogate shared by every experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub surrogate: Surrogate,
    pub operator: ObservationOperator,
    /// Truth over each window, windows numbered from 1.
    pub truth: Vec<Trajectory<TruthState>>,
    /// Observations at every checkpoint of each window.
    pub observations: Vec<Vec<Observation>>,
}

impl Experiment {
    pub fn prepare(spec: &ExperimentSpec) -> Result<Self> {
        Self::prepare_with(spec, spec.packages.clone())
    }

    /// The planted-dominance variant of `spec`.
    pub fn prepare_planted(spec: &ExperimentSpec) -> Result<Self> {
        Self::prepare_with(spec, spec.planted.apply(&spec.packages))
    }

    pub fn prepare_with(spec: &ExperimentSpec, packages: PackageConstants) -> Result<Self> {
        spec.validate()?;
        let surrogate = Surrogate::new(spec.surrogate.clone(), packages)?;
        let operator = spec.operator()?;
        let window = spec.windows.spec();
        let start = surrogate.initial_truth(seed::derive_seed(spec.seed, "truth"));
        let mut state = surrogate.spin_up(&start, spec.windows.spinup_steps)?;
        let noise_var = vec![spec.observation.noise_std.powi(2); operator.m()];
        let per_window = window.checkpoints - 1;
        let mut truth = Vec::new();
        let mut observations = Vec::new();
        for w in 0..spec.windows_needed() {
            let traj = surrogate.run_truth(&state, &window)?;
            let obs = traj
                .states
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let absolute = (w * per_window + c) as u64;
                    observe_truth(s, &operator, &noise_var, seed::derive_indexed(spec.seed, "obs-noise", absolute))
                })
                .collect::<Result<Vec<_>>>()?;
            state = traj.last().clone();
            truth.push(traj);
            observations.push(obs);
        }
        Ok(Experiment {
            spec: spec.clone(),
            surrogate,
            operator,
            truth,
            observations,
        })
    }

    fn window_index(&self, window: usize) -> Result<usize> {
        if window == 0 || window > self.truth.len() {
            return Err(precondition(format!(
                "window {window} outside 1..={}",
                self.truth.len()
            )));
        }
        Ok(window - 1)
    }

    pub fn truth_window(&self, window: usize) -> Result<&Trajectory<TruthState>> {
        Ok(&self.truth[self.window_index(window)?])
    }

    pub fn observations(&self, window: usize) -> Result<&[Observation]> {
        Ok(&self.observations[self.window_index(window)?])
    }

    /// Forecast of `config` over `window`, started from the truth.
    pub fn member(&self, config: &PhysicsConfig, window: usize) -> Result<MemberRun> {
        let w = self.window_index(window)?;
        let initial = self.truth[w].states[0].slow_state();
        let traj = self.surrogate.run_window(&initial, config, &self.spec.windows.spec())?;
        let mut forecasts = Vec::with_capacity(traj.len());
        let mut discrepancies = Vec::with_capacity(traj.len());
        for (state, obs) in traj.states.iter().zip(&self.observations[w]) {
            let o = observe_model(state, &self.operator)?;
            discrepancies.push(discrepancy(&o, obs)?.values);
            forecasts.push(o);
        }
        Ok(MemberRun {
            run: WindowRun {
                config: *config,
                window_id: window,
                forecasts,
                discrepancies,
            },
            final_state: traj.last().clone(),
        })
    }

    /// Every configuration over `window`, in configuration-index order.
    pub fn ensemble(&self, window: usize) -> Result<Vec<MemberRun>> {
        let configs: Vec<PhysicsConfig> = PhysicsConfig::all().collect();
        configs.par_iter().map(|c| self.member(c, window)).collect()
    }

    pub fn ensemble_runs(&self, window: usize) -> Result<Vec<WindowRun>> {
        Ok(self.ensemble(window)?.into_iter().map(|m| m.run).collect())
    }

    /// Observed discrepancy at the end of `window` under `config`.
    pub fn resimulated_norm(&self, config: &PhysicsConfig, window: usize) -> Result<f64> {
        Ok(l2_norm(self.member(config, window)?.run.current_discrepancy()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Forest(Forest),
    Network(ScaledNetwork),
}

impl Learner {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::Forest(_) => LearnerKind::Rf,
            Learner::Network(_) => LearnerKind::Nn,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Learner::Forest(f) => f.predict(x),
            Learner::Network(n) => n.predict(x),
        }
    }
}

fn fit_learner(
    kind: LearnerKind,
    features: &Table,
    targets: &Table,
    schema: &[String],
    hidden_layers: usize,
    spec: &ExperimentSpec,
    component: &str,
) -> Result<Learner> {
    Ok(match kind {
        LearnerKind::Rf => {
            let params = spec.forest.params(seed::derive_seed(spec.seed, &format!("forest-{component}")));
            Learner::Forest(fit_forest(features, targets, schema, &params)?)
        }
        LearnerKind::Nn => {
            let hyper = spec.network.hyper(seed::derive_seed(spec.seed, &format!("network-{component}")));
            let (net, _) = fit_scaled(features, targets, schema, hidden_layers, spec.network.hidden_width, &hyper)?;
            Learner::Network(net)
        }
    })
}

/// A trained discrepancy model together with the layout it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPredictor {
    pub learner: Learner,
    pub feature_schema: Vec<String>,
    pub grain: Grain,
}

impl ErrorPredictor {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        self.learner.predict(features)[0]
    }

    fn check_checkpoints(&self, run: &WindowRun) -> Result<()> {
        let expected = match self.grain {
            Grain::PerGridpoint => gridpoint_schema(run.checkpoints()),
            Grain::PerRun => dataset::norm_schema(run.checkpoints()),
        };
        if expected != self.feature_schema {
            return Err(Error::Schema(format!(
                "run with {} checkpoints does not match the predictor's schema",
                run.checkpoints()
            )));
        }
        Ok(())
    }
}

pub fn fit_error_model(data: &ErrorDataset, kind: LearnerKind, spec: &ExperimentSpec) -> Result<ErrorPredictor> {
    let (hidden, component) = match data.grain {
        Grain::PerGridpoint => (spec.network.pointwise_hidden_layers, "pointwise"),
        Grain::PerRun => (spec.network.norm_hidden_layers, "norm"),
    };
    Ok(ErrorPredictor {
        learner: fit_learner(kind, &data.features, &data.targets, &data.feature_schema, hidden, spec, component)?,
        feature_schema: data.feature_schema.clone(),
        grain: data.grain,
    })
}

/// Builds the training table from `train_runs` at `grain` and fits `kind`.
pub fn train_error_model(
    train_runs: &[WindowRun],
    grain: Grain,
    kind: LearnerKind,
    spec: &ExperimentSpec,
) -> Result<ErrorPredictor> {
    let data = match grain {
        Grain::PerGridpoint => build_error_records(train_runs)?,
        Grain::PerRun => build_norm_records(train_runs)?,
    };
    fit_error_model(&data, kind, spec)
}

/// Predicted discrepancy at the run's last checkpoint, one value per observed
/// point. Only the forecast is read at that checkpoint. Runs carry no clock,
/// so the returned time is 0 and callers stamp their own.
pub fn predict_next_window_error(pred: &ErrorPredictor, test_run: &WindowRun) -> Result<Discrepancy> {
    if pred.grain != Grain::PerGridpoint {
        return Err(Error::Schema("pointwise prediction needs a per-grid-point model".into()));
    }
    pred.check_checkpoints(test_run)?;
    let values = (0..test_run.m())
        .map(|k| pred.predict_row(&gridpoint_features(test_run, k)))
        .collect::<Vec<f64>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("non-finite prediction for {}", test_run.config)));
    }
    Ok(Discrepancy { values, time: 0.0 })
}

/// Predicted `||delta_t||` for a run.
pub fn predict_norm(pred: &ErrorPredictor, run: &WindowRun) -> Result<f64> {
    if pred.grain != Grain::PerRun {
        return Err(Error::Schema("norm prediction needs a per-run model".into()));
    }
    pred.check_checkpoints(run)?;
    Ok(pred.predict_row(&norm_features(run)))
}

/// Where the correction applied to each forecast comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionSource {
    /// The trained error model.
    Predicted,
    /// No correction at all.
    Zero,
    /// The exact state error `truth - forecast`.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRow {
    pub config_index: usize,
    pub config: String,
    pub prediction_rmse: f64,
    pub zero_baseline_rmse: f64,
    pub raw_rmse: f64,
    pub corrected_rmse: f64,
    pub raw_mean_abs: f64,
    pub corrected_mean_abs: f64,
}

/// Minimum, average and maximum across configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub min_mean_abs: f64,
    pub avg_mean_abs: f64,
    pub max_mean_abs: f64,
    pub min_rmse: f64,
    pub avg_rmse: f64,
    pub max_rmse: f64,
}

impl SummaryRow {
    fn over(label: &str, mean_abs: &[f64], rmse: &[f64]) -> Self {
        let (lo, avg, hi) = min_avg_max(mean_abs);
        let (rlo, ravg, rhi) = min_avg_max(rmse);
        SummaryRow {
            label: label.into(),
            min_mean_abs: lo,
            avg_mean_abs: avg,
            max_mean_abs: hi,
            min_rmse: rlo,
            avg_rmse: ravg,
            max_rmse: rhi,
        }
    }
}

fn min_avg_max(v: &[f64]) -> (f64, f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, v.iter().sum::<f64>() / v.len() as f64, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub learner: LearnerKind,
    pub train_window: usize,
    pub test_window: usize,
    pub rows: Vec<PointwiseRow>,
    pub raw: SummaryRow,
    pub corrected: SummaryRow,
    /// Configuration whose discrepancy fields are kept for plotting.
    pub field_config: String,
    pub raw_field: Vec<f64>,
    pub corrected_field: Vec<f64>,
}

impl PointwiseReport {
    /// Fraction of configurations whose corrected error beats the raw one.
    pub fn corrected_win_rate(&self) -> f64 {
        let wins = self.rows.iter().filter(|r| r.corrected_mean_abs < r.raw_mean_abs).count();
        wins as f64 / self.rows.len() as f64
    }

    pub fn prediction_win_rate(&self) -> f64 {
        let wins = self.rows.iter().filter(|r| r.prediction_rmse < r.zero_baseline_rmse).count();
        wins as f64 / self.rows.len() as f64
    }

    /// Relative drop of the average mean absolute discrepancy.
    pub fn reduction(&self) -> f64 {
        1.0 - self.corrected.avg_mean_abs / self.raw.avg_mean_abs
    }
}

pub fn run_problem_one_pointwise(spec: &ExperimentSpec) -> Result<PointwiseReport> {
    let exp = Experiment::prepare(spec)?;
    pointwise_experiment(&exp, spec.learner.kind, CorrectionSource::Predicted)
}

/// Trains on the train window and corrects every configuration's forecast at
/// the end of the test window.
pub fn pointwise_experiment(exp: &Experiment, kind: LearnerKind, source: CorrectionSource) -> Result<PointwiseReport> {
    let w = &exp.spec.windows;
    let train_runs = exp.ensemble_runs(w.train_window)?;
    let test = exp.ensemble(w.test_window)?;
    let predictor = match source {
        CorrectionSource::Predicted => Some(train_error_model(&train_runs, Grain::PerGridpoint, kind, &exp.spec)?),
        _ => None,
    };
    let truth_end = exp.truth_window(w.test_window)?.last().slow.clone();
    let obs_end = exp.observations(w.test_window)?.last().expect("window has checkpoints").clone();
    let field_index = PhysicsConfig::reference().index();
    let mut rows = Vec::with_capacity(test.len());
    let mut raw_field = Vec::new();
    let mut corrected_field = Vec::new();
    for member in &test {
        let run = &member.run;
        let actual = run.current_discrepancy();
        let predicted_delta = match &predictor {
            Some(p) => predict_next_window_error(p, run)?.values,
            None => vec![0.0; actual.len()],
        };
        let time = member.final_state.time;
        let correction = match source {
            CorrectionSource::Predicted => {
                let predicted = Discrepancy {
                    values: predicted_delta.clone(),
                    time,
                };
                correction_from_discrepancy(&exp.operator, &member.final_state, &predicted)?
            }
            CorrectionSource::Zero => ModelSpaceError {
                values: vec![0.0; member.final_state.values.len()],
                time,
            },
            CorrectionSource::Oracle => ModelSpaceError {
                values: truth_end.iter().zip(&member.final_state.values).map(|(v, x)| v - x).collect(),
                time,
            },
        };
        let corrected_state = correct_forecast(&member.final_state, &correction)?;
        let corrected = discrepancy(&observe_model(&corrected_state, &exp.operator)?, &obs_end)?.values;
        let zeros = vec![0.0; actual.len()];
        if run.config.index() == field_index {
            raw_field = actual.to_vec();
            corrected_field = corrected.clone();
        }
        rows.push(PointwiseRow {
            config_index: run.config.index(),
            config: run.config.label(),
            prediction_rmse: rmse(&predicted_delta, actual)?,
            zero_baseline_rmse: rmse(&zeros, actual)?,
            raw_rmse: rmse(actual, &zeros)?,
            corrected_rmse: rmse(&corrected, &zeros)?,
            raw_mean_abs: mean_abs(actual),
            corrected_mean_abs: mean_abs(&corrected),
        });
    }
    let col = |f: fn(&PointwiseRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let raw = SummaryRow::over("raw", &col(|r| r.raw_mean_abs), &col(|r| r.raw_rmse));
    let corrected = SummaryRow::over("corrected", &col(|r| r.corrected_mean_abs), &col(|r| r.corrected_rmse));
    Ok(PointwiseReport {
        learner: kind,
        train_window: w.train_window,
        test_window: w.test_window,
        rows,
        raw,
        corrected,
        field_config: PhysicsConfig::reference().label(),
        raw_field,
        corrected_field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub config_index: usize,
    pub config: String,
    pub true_norm: f64,
    pub rf_norm: f64,
    pub nn_norm: f64,
    pub true_rank: usize,
    pub rf_rank: usize,
    pub nn_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSkill {
    pub learner: LearnerKind,
    pub rmse: f64,
    pub spearman: f64,
    /// Configuration indices of the predicted `top_k` lowest norms.
    pub predicted_top: Vec<usize>,
    pub true_best_in_top: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub top_k: usize,
    pub true_best: usize,
    pub rows: Vec<NormRow>,
    pub skills: Vec<NormSkill>,
}

impl NormReport {
    pub fn skill(&self, kind: LearnerKind) -> &NormSkill {
        self.skills.iter().find(|s| s.learner == kind).expect("both learners reported")
    }
}

fn ranks_from(values: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; values.len()];
    for (r, i) in ascending_order(values).into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

pub fn run_problem_one_norm(spec: &ExperimentSpec) -> Result<NormReport> {
    norm_experiment(&Experiment::prepare(spec)?)
}

pub fn norm_experiment(exp: &Experiment) -> Result<NormReport> {
    let w = &exp.spec.windows;
    let train = exp.ensemble_runs(w.train_window)?;
    let test = exp.ensemble_runs(w.test_window)?;
    let truth: Vec<f64> = test.iter().map(|r| l2_norm(r.current_discrepancy())).collect();
    let top_k = exp.spec.norm.top_k.min(test.len());
    let true_best = ascending_order(&truth)[0];
    let mut predictions = Vec::new();
    let mut skills = Vec::new();
    for kind in LearnerKind::ALL {
        let model = train_error_model(&train, Grain::PerRun, kind, &exp.spec)?;
        let pred = test.iter().map(|r| predict_norm(&model, r)).collect::<Result<Vec<f64>>>()?;
        let predicted_top: Vec<usize> = ascending_order(&pred)[..top_k]
            .iter()
            .map(|&i| test[i].config.index())
            .collect();
        skills.push(NormSkill {
            learner: kind,
            rmse: rmse(&pred, &truth)?,
            spearman: spearman(&pred, &truth)?,
            true_best_in_top: predicted_top.contains(&test[true_best].config.index()),
            predicted_top,
        });
        predictions.push(pred);
    }
    let (true_ranks, rf_ranks, nn_ranks) = (ranks_from(&truth), ranks_from(&predictions[0]), ranks_from(&predictions[1]));
    let rows = test
        .iter()
        .enumerate()
        .map(|(i, r)| NormRow {
            config_index: r.config.index(),
            config: r.config.label(),
            true_norm: truth[i],
            rf_norm: predictions[0][i],
            nn_norm: predictions[1][i],
            true_rank: true_ranks[i],
            rf_rank: rf_ranks[i],
            nn_rank: nn_ranks[i],
        })
        .collect();
    Ok(NormReport {
        top_k,
        true_best: test[true_best].config.index(),
        rows,
        skills,
    })
}

/// Maps discrepancy statistics to a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsPredictor {
    Forest(PhysicsClassifier),
    Network(ScaledNetwork),
}

impl PhysicsPredictor {
    pub fn predict(&self, features: &[f64]) -> PhysicsConfig {
        match self {
            PhysicsPredictor::Forest(f) => f.predict(features),
            PhysicsPredictor::Network(n) => decode_config_argmax(&n.predict(features)).expect("network has 12 outputs"),
        }
    }
}

pub fn train_physics_model(train: &PhysicsDataset, kind: LearnerKind, spec: &ExperimentSpec) -> Result<PhysicsPredictor> {
    if train.n_rows() == 0 {
        return Err(precondition("cannot train a physics model on an empty dataset"));
    }
    Ok(match kind {
        LearnerKind::Rf => {
            let params = spec.forest.params(seed::derive_seed(spec.seed, "forest-physics"));
            PhysicsPredictor::Forest(fit_physics_classifier(train, &params)?)
        }
        LearnerKind::Nn => {
            let rows: Vec<Vec<f64>> = train.targets.iter().map(encode_config).collect();
            let targets = Table::from_rows(&rows)?;
            let hyper = spec.network.hyper(seed::derive_seed(spec.seed, "network-physics"));
            let (net, _) = fit_scaled(
                &train.features,
                &targets,
                &train.feature_schema,
                spec.network.physics_hidden_layers,
                spec.network.hidden_width,
                &hyper,
            )?;
            PhysicsPredictor::Network(net)
        }
    })
}

/// Per-package counts of predicted-option changes when the error is halved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionHistogram {
    /// In package order: closure, forcing, dissipation, integrator.
    pub counts: [usize; 4],
    pub test_size: usize,
}

impl AttributionHistogram {
    pub fn count(&self, package: Package) -> usize {
        self.counts[package as usize]
    }

    /// The package with the strictly largest count, if there is one.
    pub fn dominant(&self) -> Option<Package> {
        let max = *self.counts.iter().max()?;
        let at_max: Vec<usize> = (0..4).filter(|&i| self.counts[i] == max).collect();
        (at_max.len() == 1).then(|| Package::ALL[at_max[0]])
    }
}

/// Predicts from the test features and from the halved-error features, and
/// counts the packages whose option changes.
pub fn attribute_sensitivity(model: &PhysicsPredictor, test: &PhysicsDataset) -> Result<AttributionHistogram> {
    let first: Vec<PhysicsConfig> = test.features.iter_rows().map(|r| model.predict(r)).collect();
    attribute_sensitivity_from(model, test, &first)
}

/// As [`attribute_sensitivity`], with the first prediction supplied (for
/// example the true configurations).
pub fn attribute_sensitivity_from(
    model: &PhysicsPredictor,
    test: &PhysicsDataset,
    first: &[PhysicsConfig],
) -> Result<AttributionHistogram> {
    if test.n_rows() == 0 {
        return Err(precondition("attribution needs a non-empty test set"));
    }
    if first.len() != test.n_rows() {
        return Err(precondition("one first-pass configuration per test row is required"));
    }
    let mut counts = [0usize; 4];
    for (row, theta1) in test.features.iter_rows().zip(first) {
        let theta2 = model.predict(&halve_physics_features(row));
        for (slot, package) in Package::ALL.into_iter().enumerate() {
            if theta1.option(package) != theta2.option(package) {
                counts[slot] += 1;
            }
        }
    }
    Ok(AttributionHistogram {
        counts,
        test_size: test.n_rows(),
    })
}

/// RMSE between re-simulated discrepancy norms under `configs` and the test
/// rows' own norms.
pub fn resimulation_rmse(exp: &Experiment, test: &PhysicsDataset, configs: &[PhysicsConfig]) -> Result<f64> {
    let actual: Vec<f64> = test.features.column(4);
    let resim = test
        .keys
        .par_iter()
        .zip(configs)
        .map(|(key, cfg)| exp.resimulated_norm(cfg, key.window_id))
        .collect::<Result<Vec<f64>>>()?;
    rmse(&resim, &actual)
}

/// Re-simulates every test row under its predicted configuration.
pub fn validate_physics_model(model: &PhysicsPredictor, test: &PhysicsDataset, exp: &Experiment) -> Result<f64> {
    let predicted: Vec<PhysicsConfig> = test.features.iter_rows().map(|r| model.predict(r)).collect();
    resimulation_rmse(exp, test, &predicted)
}

/// Average re-simulation RMSE over `draws` uniformly random assignments.
pub fn random_config_baseline(exp: &Experiment, test: &PhysicsDataset, draws: usize, seed_value: u64) -> Result<f64> {
    let mut rng = seed::rng(seed_value);
    let mut total = 0.0;
    for _ in 0..draws {
        let configs: Vec<PhysicsConfig> = (0..test.n_rows())
            .map(|_| PhysicsConfig::from_index(rng.random_range(0..crate::surrogate::CONFIG_COUNT)).expect("in range"))
            .collect();
        total += resimulation_rmse(exp, test, &configs)?;
    }
    Ok(total / draws as f64)
}

/// Spread (max minus min) of the per-option mean discrepancy norm, per package.
pub fn package_spreads(runs: &[WindowRun]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (slot, package) in Package::ALL.into_iter().enumerate() {
        let means: Vec<f64> = (0..package.option_count())
            .map(|opt| {
                let norms: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.config.option(package) == opt)
                    .map(|r| l2_norm(r.current_discrepancy()))
                    .collect();
                norms.iter().sum::<f64>() / norms.len().max(1) as f64
            })
            .collect();
        let (lo, _, hi) = min_avg_max(&means);
        out[slot] = hi - lo;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSkill {
    pub learner: LearnerKind,
    pub histogram: AttributionHistogram,
    /// Histogram with the true configurations as the first prediction.
    pub histogram_true_first: AttributionHistogram,
    /// Per-package training accuracy.
    pub train_accuracy: [f64; 4],
    pub validation_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub planted: bool,
    pub train_windows: Vec<usize>,
    pub test_windows: Vec<usize>,
    pub package_spreads: [f64; 4],
    pub random_baseline_rmse: f64,
    pub skills: Vec<PhysicsSkill>,
}

impl PhysicsReport {
    pub fn skill(&self, kind: LearnerKind) -> &PhysicsSkill {
        self.skills.iter().find(|s| s.learner == kind).expect("both learners reported")
    }

    /// Ratio of the largest package spread to the next largest.
    pub fn dominance_ratio(&self) -> f64 {
        let mut s = self.package_spreads.to_vec();
        s.sort_by(|a, b| b.total_cmp(a));
        s[0] / s[1]
    }
}

fn physics_records(exp: &Experiment, windows: &[usize]) -> Result<(PhysicsDataset, Vec<WindowRun>)> {
    let mut runs = Vec::new();
    for &w in windows {
        runs.extend(exp.ensemble_runs(w)?);
    }
    Ok((build_physics_records(&runs)?, runs))
}

pub fn run_problem_two(spec: &ExperimentSpec, planted: bool) -> Result<PhysicsReport> {
    let exp = if planted {
        Experiment::prepare_planted(spec)?
    } else {
        Experiment::prepare(spec)?
    };
    physics_experiment(&exp, planted)
}

pub fn physics_experiment(exp: &Experiment, planted: bool) -> Result<PhysicsReport> {
    let p = &exp.spec.physics;
    let (train, _) = physics_records(exp, &p.train_windows)?;
    let (test, test_runs) = physics_records(exp, &p.test_windows)?;
    let random_baseline_rmse = random_config_baseline(exp, &test, p.random_draws, seed::derive_seed(exp.spec.seed, "baseline"))?;
    let mut skills = Vec::new();
    for kind in LearnerKind::ALL {
        let model = train_physics_model(&train, kind, &exp.spec)?;
        let mut correct = [0usize; 4];
        for (row, truth) in train.features.iter_rows().zip(&train.targets) {
            let guess = model.predict(row);
            for (slot, package) in Package::ALL.into_iter().enumerate() {
                correct[slot] += usize::from(guess.option(package) == truth.option(package));
            }
        }
        skills.push(PhysicsSkill {
            learner: kind,
            histogram: attribute_sensitivity(&model, &test)?,
            histogram_true_first: attribute_sensitivity_from(&model, &test, &test.targets)?,
            train_accuracy: correct.map(|c| c as f64 / train.n_rows() as f64),
            validation_rmse: validate_physics_model(&model, &test, exp)?,
        });
    }
    Ok(PhysicsReport {
        planted,
        train_windows: p.train_windows.clone(),
        test_windows: p.test_windows.clone(),
        package_spreads: package_spreads(&test_runs),
        random_baseline_rmse,
        skills,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_by_hand() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2f64.sqrt());
        assert_eq!(rmse(&[3.0, -1.0], &[3.0, -1.0]).unwrap(), 0.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[10.0, 30.0, 20.0, 20.0]), vec![1.0, 4.0, 2.5, 2.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ascending_order(&[2.0, 1.0, 1.0]), vec![1, 2, 0]);
    }

    #[test]
    fn dominant_needs_a_strict_maximum() {
        let h = AttributionHistogram { counts: [3, 1, 12, 9], test_size: 20 };
        assert_eq!(h.dominant(), Some(Package::Dissipation));
        let tied = AttributionHistogram { counts: [5, 5, 0, 0], test_size: 20 };
        assert_eq!(tied.dominant(), None);
    }

    fn tiny_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::default();
        spec.surrogate.k = 8;
        spec.surrogate.j = 4;
        spec.windows.spinup_steps = 100;
        spec.windows.checkpoints = 4;
        spec.network.epochs = 3;
        spec.network.hidden_width = 4;
        spec
    }

    #[test]
    fn oracle_correction_without_noise_is_exact() {
        let mut spec = tiny_spec();
        spec.observation.noise_std = 0.0;
        let exp = Experiment::prepare(&spec).unwrap();
        let report = pointwise_experiment(&exp, LearnerKind::Rf, CorrectionSource::Oracle).unwrap();
        for row in &report.rows {
            assert!(row.corrected_mean_abs < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn zero_correction_reproduces_raw_numbers() {
        let exp = Experiment::prepare(&tiny_spec()).unwrap();
        let report = pointwise_experiment(&exp, LearnerKind::Rf, CorrectionSource::Zero).unwrap();
        for row in &report.rows {
            assert_eq!(row.corrected_mean_abs, row.raw_mean_abs);
            assert_eq!(row.corrected_rmse, row.raw_rmse);
        }
        assert_eq!(report.raw.avg_mean_abs, report.corrected.avg_mean_abs);
    }

    #[test]
    fn report_structure() {
        let exp = Experiment::prepare(&tiny_spec()).unwrap();
        let report = pointwise_experiment(&exp, LearnerKind::Rf, CorrectionSource::Predicted).unwrap();
        assert_eq!(report.rows.len(), 72);
        assert_eq!(report.raw_field.len(), 8);
        assert!(report.rows.iter().all(|r| r.prediction_rmse.is_finite()));
    }

    #[test]
    fn windows_share_their_boundary_observation() {
        let exp = Experiment::prepare(&tiny_spec()).unwrap();
        assert_eq!(exp.observations[0].last(), exp.observations[1].first());
        assert_eq!(exp.truth[0].last(), &exp.truth[1].states[0]);
    }

    #[test]
    fn uncoupled_member_has_no_structural_error_in_a_decoupled_truth() {
        let mut spec = tiny_spec();
        spec.surrogate.coupling = 0.0;
        spec.observation.noise_std = 0.0;
        let exp = Experiment::prepare(&spec).unwrap();
        let run = exp.member(&PhysicsConfig::uncoupled(), 2).unwrap();
        assert!(run.run.current_discrepancy().iter().all(|d| d.abs() < 1e-12));
    }
}
