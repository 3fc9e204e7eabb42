//! Two-scale Lorenz-96 truth and a single-scale forecast model with
//! swappable physics packages.
//!
//! The truth carries `K` slow variables `X_k`, each coupled to `J` fast
//! variables `Y_{j,k}`. The forecast model only resolves `X_k`; the effect of
//! the fast variables is replaced by a closure, and the forcing, damping and
//! time stepping are each picked from a small menu of options. The product of
//! those menus is the configuration space the learners explore.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::seed;

/// Physical constants of the two-scale system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwinParams {
    /// Number of slow (grid) variables.
    pub k: usize,
    /// Fast variables per slow variable.
    pub j: usize,
    /// Constant forcing `F`.
    pub forcing: f64,
    /// Coupling strength `h`.
    pub coupling: f64,
    /// Time-scale ratio `c`.
    pub time_scale: f64,
    /// Amplitude-scale ratio `b`.
    pub space_scale: f64,
    /// Base integration step.
    pub dt: f64,
}

impl Default for TwinParams {
    fn default() -> Self {
        TwinParams {
            k: 40,
            j: 8,
            forcing: 8.0,
            coupling: 1.0,
            time_scale: 10.0,
            space_scale: 10.0,
            dt: 0.005,
        }
    }
}

impl TwinParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(precondition(format!("k must be at least 4, got {}", self.k)));
        }
        if self.j < 1 {
            return Err(precondition("j must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if self.space_scale == 0.0 {
            return Err(precondition("space_scale must be nonzero"));
        }
        Ok(())
    }

    fn coupling_coefficient(&self) -> f64 {
        self.coupling * self.time_scale / self.space_scale
    }
}

/// Coefficients behind the package options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackageConstants {
    /// `a` in the linear-damping closure `-a X`.
    pub linear_damping: f64,
    /// `p0 + p1 X + p2 X^2`.
    pub quadratic: [f64; 3],
    /// `p0 + p1 X + p2 X^2 + p3 X^3`.
    pub cubic: [f64; 4],
    /// Relative amplitude of the sinusoidal-in-space forcing.
    pub sine_amplitude: f64,
    /// Relative amplitude of the time-modulated forcing.
    pub time_amplitude: f64,
    /// Period of the time-modulated forcing.
    pub time_period: f64,
    /// Damping coefficient of the enhanced dissipation option.
    pub enhanced_dissipation: f64,
    /// When set, closure option `i` becomes `(1 - ladder[i])` times the cubic
    /// fit, replacing the fitted option closures.
    pub closure_ladder: Option<[f64; 4]>,
}

impl Default for PackageConstants {
    fn default() -> Self {
        // Least-squares fits of the coupling term over a default truth run;
        // regenerate with `errcast fit-closure`.
        PackageConstants {
            linear_damping: 0.3026835703436603,
            quadratic: [-0.1465437863502304, -0.36258431510322486, 0.017179373894640297],
            cubic: [
                -0.10217114496013327,
                -0.3673228562859207,
                0.007662337603824738,
                0.0013850758599146967,
            ],
            sine_amplitude: 0.25,
            time_amplitude: 0.25,
            time_period: 0.5,
            enhanced_dissipation: 1.05,
            closure_ladder: None,
        }
    }
}

macro_rules! option_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                $name::ALL.iter().position(|&o| o == self).expect("listed variant")
            }

            pub fn from_index(index: usize) -> Option<Self> {
                $name::ALL.get(index).copied()
            }

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

option_enum! {
    /// Replacement for the unresolved fast-variable coupling.
    Closure { None => "none", Linear => "linear", Quadratic => "quadratic", Cubic => "cubic" }
}

option_enum! {
    /// Shape of the large-scale forcing.
    Forcing { Constant => "constant", Sinusoidal => "sinusoidal", TimeModulated => "time-modulated" }
}

option_enum! {
    /// Linear damping of the slow variables.
    Dissipation { Standard => "standard", Enhanced => "enhanced" }
}

option_enum! {
    /// Time-stepping scheme.
    Integrator { Rk4 => "rk4", Rk4Coarse => "rk4-coarse", Rk2 => "rk2" }
}

impl Integrator {
    /// Native step length as a multiple of the base `dt`.
    pub fn step_multiplier(self) -> usize {
        match self {
            Integrator::Rk4 | Integrator::Rk2 => 1,
            Integrator::Rk4Coarse => 2,
        }
    }
}

/// The four interchangeable physics packages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Package {
    Closure,
    Forcing,
    Dissipation,
    Integrator,
}

impl Package {
    pub const ALL: [Package; 4] = [
        Package::Closure,
        Package::Forcing,
        Package::Dissipation,
        Package::Integrator,
    ];

    pub fn option_count(self) -> usize {
        match self {
            Package::Closure => Closure::ALL.len(),
            Package::Forcing => Forcing::ALL.len(),
            Package::Dissipation => Dissipation::ALL.len(),
            Package::Integrator => Integrator::ALL.len(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Package::Closure => "closure",
            Package::Forcing => "forcing",
            Package::Dissipation => "dissipation",
            Package::Integrator => "integrator",
        }
    }
}

impl fmt::Display for Package {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One option per physics package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub closure: Closure,
    pub forcing: Forcing,
    pub dissipation: Dissipation,
    pub integrator: Integrator,
}

/// Size of the configuration space.
pub const CONFIG_COUNT: usize = 4 * 3 * 2 * 3;

impl PhysicsConfig {
    /// The configuration whose closure is the quadratic fit; everything else
    /// matches the truth's slow dynamics.
    pub fn reference() -> Self {
        PhysicsConfig {
            closure: Closure::Quadratic,
            forcing: Forcing::Constant,
            dissipation: Dissipation::Standard,
            integrator: Integrator::Rk4,
        }
    }

    /// Identical to the truth's slow dynamics with the coupling switched off.
    pub fn uncoupled() -> Self {
        PhysicsConfig {
            closure: Closure::None,
            ..Self::reference()
        }
    }

    /// All configurations, closure varying slowest and integrator fastest.
    pub fn all() -> impl Iterator<Item = PhysicsConfig> {
        (0..CONFIG_COUNT).map(|i| PhysicsConfig::from_index(i).expect("index in range"))
    }

    pub fn index(&self) -> usize {
        let [c, f, d, i] = self.option_indices();
        ((c * 3 + f) * 2 + d) * 3 + i
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= CONFIG_COUNT {
            return None;
        }
        let i = index % 3;
        let d = (index / 3) % 2;
        let f = (index / 6) % 3;
        let c = index / 18;
        Self::from_option_indices([c, f, d, i])
    }

    pub fn option_indices(&self) -> [usize; 4] {
        [
            self.closure.index(),
            self.forcing.index(),
            self.dissipation.index(),
            self.integrator.index(),
        ]
    }

    pub fn option(&self, package: Package) -> usize {
        self.option_indices()[package as usize]
    }

    pub fn from_option_indices(options: [usize; 4]) -> Option<Self> {
        Some(PhysicsConfig {
            closure: Closure::from_index(options[0])?,
            forcing: Forcing::from_index(options[1])?,
            dissipation: Dissipation::from_index(options[2])?,
            integrator: Integrator::from_index(options[3])?,
        })
    }

    pub fn with_option(&self, package: Package, option: usize) -> Option<Self> {
        let mut options = self.option_indices();
        options[package as usize] = option;
        Self::from_option_indices(options)
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.closure, self.forcing, self.dissipation, self.integrator
        )
    }
}

impl fmt::Display for PhysicsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Full state of the two-scale truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub slow: Vec<f64>,
    /// `Y_{j,k}` stored at `k * J + j`; the fast variables form one ring.
    pub fast: Vec<f64>,
    pub time: f64,
}

impl TruthState {
    pub fn slow_state(&self) -> ModelState {
        ModelState {
            values: self.slow.clone(),
            time: self.time,
        }
    }
}

/// State of the forecast model; lives in the truth's slow space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub values: Vec<f64>,
    pub time: f64,
}

/// Uniformly spaced checkpoints of a forecast window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub checkpoints: usize,
    pub spacing: f64,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints < 2 {
            return Err(precondition(format!(
                "a window needs at least 2 checkpoints, got {}",
                self.checkpoints
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(precondition(format!(
                "checkpoint spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.spacing * (self.checkpoints - 1) as f64
    }
}

/// States at the checkpoints of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    /// The model configuration; `None` for the truth.
    pub config: Option<PhysicsConfig>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("trajectories hold at least two states")
    }
}

/// Nonnegative, precipitation-like diagnostic: `max(x_k, 0)`.
pub fn qoi(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v.max(0.0)).collect()
}

/// Least-squares fits of the coupling term against `X_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureFit {
    pub linear_damping: f64,
    pub quadratic: [f64; 3],
    pub cubic: [f64; 4],
    pub samples: usize,
}

/// Truth process and forecast model sharing one set of constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub params: TwinParams,
    pub packages: PackageConstants,
}

fn ensure_finite(values: &[f64], label: &str, time: f64) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Blowup {
            component: format!("{label}[{i}]"),
            time,
        }),
        None => Ok(()),
    }
}

fn axpy(out: &mut [f64], base: &[f64], scale: f64, dir: &[f64]) {
    for ((o, b), d) in out.iter_mut().zip(base).zip(dir) {
        *o = b + scale * d;
    }
}

fn polynomial(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Advection and damping shared by truth and model:
/// `-X_{k-1}(X_{k-2} - X_{k+1}) - d X_k`.
#[inline]
fn slow_core(x: &[f64], k: usize, damping: f64) -> f64 {
    let n = x.len();
    let km1 = (k + n - 1) % n;
    let km2 = (k + n - 2) % n;
    let kp1 = (k + 1) % n;
    -x[km1] * (x[km2] - x[kp1]) - damping * x[k]
}

impl Surrogate {
    pub fn new(params: TwinParams, packages: PackageConstants) -> Result<Self> {
        params.validate()?;
        Ok(Surrogate { params, packages })
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    fn check_truth(&self, state: &TruthState) -> Result<()> {
        let TwinParams { k, j, .. } = self.params;
        if state.slow.len() != k || state.fast.len() != k * j {
            return Err(precondition(format!(
                "truth state has {} slow / {} fast values, expected {} / {}",
                state.slow.len(),
                state.fast.len(),
                k,
                k * j
            )));
        }
        ensure_finite(&state.slow, "slow", state.time)?;
        ensure_finite(&state.fast, "fast", state.time)
    }

    fn check_model(&self, state: &ModelState) -> Result<()> {
        if state.values.len() != self.params.k {
            return Err(precondition(format!(
                "model state has {} values, expected {}",
                state.values.len(),
                self.params.k
            )));
        }
        ensure_finite(&state.values, "x", state.time)
    }

    /// Coupling felt by each slow variable: `-(hc/b) sum_j Y_{j,k}`.
    pub fn coupling_term(&self, fast: &[f64]) -> Vec<f64> {
        let j = self.params.j;
        let coef = self.params.coupling_coefficient();
        fast.chunks(j).map(|ys| -coef * ys.iter().sum::<f64>()).collect()
    }

    fn truth_tendency(&self, slow: &[f64], fast: &[f64], ds: &mut [f64], df: &mut [f64]) {
        let TwinParams {
            j,
            forcing,
            time_scale: c,
            space_scale: b,
            ..
        } = self.params;
        let coef = self.params.coupling_coefficient();
        for k in 0..slow.len() {
            let sum: f64 = fast[k * j..(k + 1) * j].iter().sum();
            ds[k] = slow_core(slow, k, 1.0) + forcing - coef * sum;
        }
        let n = fast.len();
        for i in 0..n {
            let ip1 = (i + 1) % n;
            let ip2 = (i + 2) % n;
            let im1 = (i + n - 1) % n;
            df[i] = -c * b * fast[ip1] * (fast[ip2] - fast[im1]) - c * fast[i]
                + coef * slow[i / j];
        }
    }

    /// Advances the truth by `dt` with one classical Runge-Kutta step.
    pub fn truth_step(&self, state: &TruthState, dt: f64) -> Result<TruthState> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(precondition(format!("dt must be nonnegative, got {dt}")));
        }
        self.check_truth(state)?;
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let (ns, nf) = (state.slow.len(), state.fast.len());
        let (x, y) = (&state.slow, &state.fast);
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(4);
        let mut kf: Vec<Vec<f64>> = Vec::with_capacity(4);
        let mut xs = vec![0.0; ns];
        let mut yf = vec![0.0; nf];
        for stage in 0..4 {
            let (mut ds, mut df) = (vec![0.0; ns], vec![0.0; nf]);
            if stage == 0 {
                self.truth_tendency(x, y, &mut ds, &mut df);
            } else {
                let h = if stage == 3 { dt } else { 0.5 * dt };
                axpy(&mut xs, x, h, &ks[stage - 1]);
                axpy(&mut yf, y, h, &kf[stage - 1]);
                self.truth_tendency(&xs, &yf, &mut ds, &mut df);
            }
            ks.push(ds);
            kf.push(df);
        }
        let combine = |base: &[f64], k: &[Vec<f64>]| -> Vec<f64> {
            base.iter()
                .enumerate()
                .map(|(i, v)| v + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
                .collect()
        };
        let next = TruthState {
            slow: combine(x, &ks),
            fast: combine(y, &kf),
            time: state.time + dt,
        };
        ensure_finite(&next.slow, "slow", next.time)?;
        ensure_finite(&next.fast, "fast", next.time)?;
        Ok(next)
    }

    /// Forcing felt by grid point `k` at time `t`.
    pub fn forcing_at(&self, option: Forcing, k: usize, t: f64) -> f64 {
        let f = self.params.forcing;
        let p = &self.packages;
        match option {
            Forcing::Constant => f,
            Forcing::Sinusoidal => {
                f * (1.0 + p.sine_amplitude * (2.0 * PI * k as f64 / self.params.k as f64).sin())
            }
            Forcing::TimeModulated => f * (1.0 + p.time_amplitude * (2.0 * PI * t / p.time_period).sin()),
        }
    }

    /// Parameterized coupling for a closure option.
    pub fn closure_at(&self, option: Closure, x: f64) -> f64 {
        let p = &self.packages;
        if let Some(ladder) = p.closure_ladder {
            return (1.0 - ladder[option.index()]) * polynomial(&p.cubic, x);
        }
        match option {
            Closure::None => 0.0,
            Closure::Linear => -p.linear_damping * x,
            Closure::Quadratic => polynomial(&p.quadratic, x),
            Closure::Cubic => polynomial(&p.cubic, x),
        }
    }

    pub fn damping(&self, option: Dissipation) -> f64 {
        match option {
            Dissipation::Standard => 1.0,
            Dissipation::Enhanced => self.packages.enhanced_dissipation,
        }
    }

    fn model_tendency(&self, config: &PhysicsConfig, x: &[f64], t: f64, out: &mut [f64]) {
        let damping = self.damping(config.dissipation);
        for k in 0..x.len() {
            out[k] = slow_core(x, k, damping)
                + self.forcing_at(config.forcing, k, t)
                + self.closure_at(config.closure, x[k]);
        }
    }

    /// Length of one `model_step` for `config`.
    pub fn model_step_length(&self, config: &PhysicsConfig) -> f64 {
        self.params.dt * config.integrator.step_multiplier() as f64
    }

    /// One native step of the configured integrator. `dt` is the base step;
    /// coarse integrators advance by a multiple of it.
    pub fn model_step(&self, state: &ModelState, config: &PhysicsConfig, dt: f64) -> Result<ModelState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(precondition(format!("dt must be positive, got {dt}")));
        }
        self.check_model(state)?;
        let h = dt * config.integrator.step_multiplier() as f64;
        let x = &state.values;
        let t = state.time;
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.model_tendency(config, x, t, &mut k1);
        let values: Vec<f64> = match config.integrator {
            Integrator::Rk4 | Integrator::Rk4Coarse => {
                let mut k2 = vec![0.0; n];
                let mut k3 = vec![0.0; n];
                let mut k4 = vec![0.0; n];
                axpy(&mut tmp, x, 0.5 * h, &k1);
                self.model_tendency(config, &tmp, t + 0.5 * h, &mut k2);
                axpy(&mut tmp, x, 0.5 * h, &k2);
                self.model_tendency(config, &tmp, t + 0.5 * h, &mut k3);
                axpy(&mut tmp, x, h, &k3);
                self.model_tendency(config, &tmp, t + h, &mut k4);
                (0..n)
                    .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
            Integrator::Rk2 => {
                // Heun's method.
                let mut k2 = vec![0.0; n];
                axpy(&mut tmp, x, h, &k1);
                self.model_tendency(config, &tmp, t + h, &mut k2);
                (0..n).map(|i| x[i] + 0.5 * h * (k1[i] + k2[i])).collect()
            }
        };
        let next = ModelState {
            values,
            time: t + h,
        };
        ensure_finite(&next.values, "x", next.time)?;
        Ok(next)
    }

    fn steps_per_checkpoint(&self, spacing: f64, step: f64) -> Result<usize> {
        let ratio = spacing / step;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(precondition(format!(
                "checkpoint spacing {spacing} is not a whole number of {step}-long steps"
            )));
        }
        Ok(steps as usize)
    }

    /// Free forecast from `initial`, recorded at each checkpoint.
    pub fn run_window(
        &self,
        initial: &ModelState,
        config: &PhysicsConfig,
        window: &WindowSpec,
    ) -> Result<Trajectory<ModelState>> {
        window.validate()?;
        self.check_model(initial)?;
        let steps = self.steps_per_checkpoint(window.spacing, self.model_step_length(config))?;
        let mut states = Vec::with_capacity(window.checkpoints);
        states.push(initial.clone());
        let mut current = initial.clone();
        for checkpoint in 1..window.checkpoints {
            for _ in 0..steps {
                current = self
                    .model_step(&current, config, self.params.dt)
                    .map_err(|e| Error::Window {
                        checkpoint,
                        source: Box::new(e),
                    })?;
            }
            states.push(current.clone());
        }
        Ok(Trajectory {
            states,
            config: Some(*config),
        })
    }

    /// Truth integrated over a window at the base step.
    pub fn run_truth(&self, initial: &TruthState, window: &WindowSpec) -> Result<Trajectory<TruthState>> {
        window.validate()?;
        self.check_truth(initial)?;
        let steps = self.steps_per_checkpoint(window.spacing, self.params.dt)?;
        let mut states = Vec::with_capacity(window.checkpoints);
        states.push(initial.clone());
        let mut current = initial.clone();
        for checkpoint in 1..window.checkpoints {
            for _ in 0..steps {
                current = self
                    .truth_step(&current, self.params.dt)
                    .map_err(|e| Error::Window {
                        checkpoint,
                        source: Box::new(e),
                    })?;
            }
            states.push(current.clone());
        }
        Ok(Trajectory {
            states,
            config: None,
        })
    }

    /// Random initial truth near the uniform state `X = F`.
    pub fn initial_truth(&self, seed: u64) -> TruthState {
        let TwinParams { k, j, forcing, .. } = self.params;
        let mut rng = seed::rng(seed);
        let slow = (0..k)
            .map(|_| forcing + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fast = (0..k * j)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        TruthState {
            slow,
            fast,
            time: 0.0,
        }
    }

    /// Integrates `steps` base steps and resets the clock to zero.
    pub fn spin_up(&self, state: &TruthState, steps: usize) -> Result<TruthState> {
        let mut current = state.clone();
        for _ in 0..steps {
            current = self.truth_step(&current, self.params.dt)?;
        }
        current.time = 0.0;
        Ok(current)
    }

    /// Fits the closure polynomials to `(X_k, coupling_k)` pairs pooled over
    /// the given truth states.
    pub fn fit_closures(&self, states: &[TruthState]) -> Result<ClosureFit> {
        let mut xs = Vec::new();
        let mut us = Vec::new();
        for state in states {
            self.check_truth(state)?;
            xs.extend_from_slice(&state.slow);
            us.extend(self.coupling_term(&state.fast));
        }
        if xs.len() < 4 {
            return Err(precondition("closure fit needs at least 4 samples"));
        }
        let fit = |degree: usize, intercept: bool| -> Result<Vec<f64>> {
            let first = usize::from(!intercept);
            let cols = degree + 1 - first;
            let design = DMatrix::from_fn(xs.len(), cols, |r, c| xs[r].powi((c + first) as i32));
            let rhs = DVector::from_column_slice(&us);
            let coeffs = design
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Singular(format!("closure fit: {e}")))?;
            Ok(coeffs.iter().copied().collect())
        };
        let linear = fit(1, false)?;
        let quadratic = fit(2, true)?;
        let cubic = fit(3, true)?;
        Ok(ClosureFit {
            linear_damping: -linear[0],
            quadratic: [quadratic[0], quadratic[1], quadratic[2]],
            cubic: [cubic[0], cubic[1], cubic[2], cubic[3]],
            samples: xs.len(),
        })
    }

    /// Runs a seeded truth (spin-up then `steps` base steps, sampling every
    /// `stride` steps) and fits the closures on it.
    pub fn fit_closures_from_run(
        &self,
        seed: u64,
        spinup_steps: usize,
        steps: usize,
        stride: usize,
    ) -> Result<ClosureFit> {
        let mut state = self.spin_up(&self.initial_truth(seed), spinup_steps)?;
        let stride = stride.max(1);
        let mut samples = Vec::with_capacity(steps / stride + 1);
        for step in 0..steps {
            if step % stride == 0 {
                samples.push(state.clone());
            }
            state = self.truth_step(&state, self.params.dt)?;
        }
        self.fit_closures(&samples)
    }
}
