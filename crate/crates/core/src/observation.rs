//! Observation operators, noisy measurements, discrepancies and the maps
//! that carry an observation-space error back into model space.
//!
//! Sign convention: a discrepancy is `o - y`, model minus measurement, while
//! a model-space error is the correction `v - x` that moves the forecast
//! onto the truth. A predicted discrepancy therefore enters the model-space
//! maps with its sign flipped; see [`correction_from_discrepancy`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::seed;
use crate::surrogate::{qoi, ModelState, TruthState};

/// Gram matrices with a condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// Observe the selected state components directly.
    Subset,
    /// Observe `max(x, 0)` at the selected components.
    Qoi,
}

/// Maps a state vector onto the observed components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    kind: ObservationKind,
    indices: Vec<usize>,
    state_dim: usize,
}

impl ObservationOperator {
    pub fn new(kind: ObservationKind, indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(precondition("observation operator needs at least one index"));
        }
        let mut seen = vec![false; state_dim];
        for &i in &indices {
            if i >= state_dim {
                return Err(precondition(format!(
                    "observation index {i} outside state of dimension {state_dim}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(precondition(format!("observation index {i} repeated")));
            }
        }
        Ok(ObservationOperator {
            kind,
            indices,
            state_dim,
        })
    }

    /// Observes every state component.
    pub fn full(kind: ObservationKind, state_dim: usize) -> Result<Self> {
        Self::new(kind, (0..state_dim).collect(), state_dim)
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of observed components `m`.
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.state_dim {
            return Err(precondition(format!(
                "state has {len} components, operator expects {}",
                self.state_dim
            )));
        }
        Ok(())
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(values.len())?;
        let selected: Vec<f64> = self.indices.iter().map(|&i| values[i]).collect();
        Ok(match self.kind {
            ObservationKind::Subset => selected,
            ObservationKind::Qoi => qoi(&selected),
        })
    }

    /// The `m x K` row-selection matrix.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m(), self.state_dim);
        for (row, &col) in self.indices.iter().enumerate() {
            h[(row, col)] = 1.0;
        }
        h
    }

    /// Linearization `h'(x)`. For the QoI operator the derivative of
    /// `max(x, 0)` is taken as 1 where `x > 0` and 0 elsewhere.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x.len())?;
        let mut h = self.selection_matrix();
        if self.kind == ObservationKind::Qoi {
            for (row, &col) in self.indices.iter().enumerate() {
                if x[col] <= 0.0 {
                    h[(row, col)] = 0.0;
                }
            }
        }
        Ok(h)
    }
}

/// Noisy measurement of the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub time: f64,
    /// Diagonal of the noise covariance.
    pub noise_var: Vec<f64>,
}

/// Model-predicted minus measured observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub values: Vec<f64>,
    pub time: f64,
}

/// Error estimate in model space: the correction `v - x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpaceError {
    pub values: Vec<f64>,
    pub time: f64,
}

/// `y = h(v) + eps`, `eps ~ N(0, diag(noise_var))`.
pub fn observe_truth(
    truth: &TruthState,
    op: &ObservationOperator,
    noise_var: &[f64],
    rng_seed: u64,
) -> Result<Observation> {
    if noise_var.len() != op.m() {
        return Err(precondition(format!(
            "noise covariance has {} entries, operator observes {}",
            noise_var.len(),
            op.m()
        )));
    }
    if let Some(bad) = noise_var.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(precondition(format!("noise variance {bad} is negative")));
    }
    let clean = op.apply(&truth.slow)?;
    let mut rng = seed::rng(rng_seed);
    let values = clean
        .iter()
        .zip(noise_var)
        .map(|(h, var)| {
            let z: f64 = rng.sample(StandardNormal);
            h + var.sqrt() * z
        })
        .collect();
    Ok(Observation {
        values,
        time: truth.time,
        noise_var: noise_var.to_vec(),
    })
}

pub fn observe_model(state: &ModelState, op: &ObservationOperator) -> Result<Vec<f64>> {
    op.apply(&state.values)
}

pub fn discrepancy(o: &[f64], y: &Observation) -> Result<Discrepancy> {
    if o.len() != y.values.len() {
        return Err(precondition(format!(
            "prediction has {} components, observation {}",
            o.len(),
            y.values.len()
        )));
    }
    Ok(Discrepancy {
        values: o.iter().zip(&y.values).map(|(a, b)| a - b).collect(),
        time: y.time,
    })
}

fn condition_check(gram: &DMatrix<f64>, what: &str) -> Result<()> {
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min.is_nan() || min <= 0.0 || max / min > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "{what} Gram matrix is rank deficient (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    Ok(())
}

fn spd_solve(a: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok(chol.solve(rhs))
}

/// Least-squares reconstruction of a model-space vector from its image
/// under the linear map `h` (`m x K`, `m <= K`).
///
/// With `m < K` this is the minimum-norm solution `H^T (H H^T)^{-1} d`;
/// with `m = K` it is `(H^T H)^{-1} H^T d`. Either way `H * result = d`
/// whenever `d` lies in the range of `H`.
pub fn project_to_model_space(delta: &Discrepancy, h: &DMatrix<f64>) -> Result<ModelSpaceError> {
    let (m, k) = h.shape();
    if delta.values.len() != m {
        return Err(precondition(format!(
            "discrepancy has {} components, H has {m} rows",
            delta.values.len()
        )));
    }
    if m > k {
        return Err(precondition(format!("H is {m}x{k}; more observations than state components")));
    }
    let d = DVector::from_column_slice(&delta.values);
    let values = if m < k {
        let gram = h * h.transpose();
        condition_check(&gram, "H H^T")?;
        h.transpose() * spd_solve(gram, &d, "H H^T")?
    } else {
        let gram = h.transpose() * h;
        condition_check(&gram, "H^T H")?;
        spd_solve(gram, &(h.transpose() * d), "H^T H")?
    };
    Ok(ModelSpaceError {
        values: values.iter().copied().collect(),
        time: delta.time,
    })
}

/// `cov_xo (cov_oo + R)^{-1} d`, solved through a Cholesky factorization.
pub fn kalman_map(
    delta: &Discrepancy,
    cov_xo: &DMatrix<f64>,
    cov_oo: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<ModelSpaceError> {
    let m = delta.values.len();
    if cov_xo.ncols() != m || cov_oo.shape() != (m, m) || r.shape() != (m, m) {
        return Err(precondition(format!(
            "covariance shapes {:?}, {:?}, {:?} do not match {m} observations",
            cov_xo.shape(),
            cov_oo.shape(),
            r.shape()
        )));
    }
    let innovation = cov_oo + r;
    let scale = innovation.amax().max(f64::MIN_POSITIVE);
    if (&innovation - innovation.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Singular("innovation covariance is not symmetric".into()));
    }
    let d = DVector::from_column_slice(&delta.values);
    let gain_times_d = cov_xo * spd_solve(innovation, &d, "innovation covariance")?;
    Ok(ModelSpaceError {
        values: gain_times_d.iter().copied().collect(),
        time: delta.time,
    })
}

/// Sample cross- and auto-covariances `(cov(x, o), cov(o, o))` of an
/// ensemble, normalized by `n - 1`.
pub fn ensemble_covariances(states: &[Vec<f64>], observed: &[Vec<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = states.len();
    if n < 2 || observed.len() != n {
        return Err(precondition(format!(
            "ensemble needs at least 2 members with matching observations, got {n} / {}",
            observed.len()
        )));
    }
    let k = states[0].len();
    let m = observed[0].len();
    if states.iter().any(|s| s.len() != k) || observed.iter().any(|o| o.len() != m) {
        return Err(precondition("ensemble members have inconsistent dimensions"));
    }
    let xs = DMatrix::from_fn(k, n, |i, j| states[j][i]);
    let os = DMatrix::from_fn(m, n, |i, j| observed[j][i]);
    let center = |a: &DMatrix<f64>| {
        let mean = a.column_mean();
        let mut c = a.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        c
    };
    let (xa, oa) = (center(&xs), center(&os));
    let denom = (n - 1) as f64;
    Ok((&xa * oa.transpose() / denom, &oa * oa.transpose() / denom))
}

/// `x + delta`; the time stamp is kept.
pub fn correct_forecast(x: &ModelState, delta: &ModelSpaceError) -> Result<ModelState> {
    if x.values.len() != delta.values.len() {
        return Err(precondition(format!(
            "state has {} components, correction {}",
            x.values.len(),
            delta.values.len()
        )));
    }
    Ok(ModelState {
        values: x.values.iter().zip(&delta.values).map(|(a, b)| a + b).collect(),
        time: x.time,
    })
}

/// Model-space correction implied by a predicted discrepancy at forecast `x`.
///
/// Uses `h'(x)`; observed components where the linearization vanishes carry
/// no information about the state and are dropped before the minimum-norm
/// reconstruction, so they receive no correction.
pub fn correction_from_discrepancy(
    op: &ObservationOperator,
    x: &ModelState,
    predicted: &Discrepancy,
) -> Result<ModelSpaceError> {
    let h = op.jacobian(&x.values)?;
    let active: Vec<usize> = (0..h.nrows()).filter(|&r| h.row(r).amax() > 0.0).collect();
    if active.is_empty() {
        return Ok(ModelSpaceError {
            values: vec![0.0; op.state_dim()],
            time: predicted.time,
        });
    }
    let h_active = h.select_rows(active.iter());
    let target = Discrepancy {
        values: active.iter().map(|&r| -predicted.values[r]).collect(),
        time: predicted.time,
    };
    project_to_model_space(&target, &h_active)
}
