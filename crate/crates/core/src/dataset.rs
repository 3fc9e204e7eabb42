//! Feature/target tables built from ensembles of window runs.
//!
//! Three layouts are produced:
//!
//! * per grid point (error prediction): `[one-hot config | o_tau at the point
//!   for each past checkpoint | delta_tau at the point for each past
//!   checkpoint | o_t at the point]`, target `delta_t` at the point;
//! * per run (error norm): `[one-hot config | ||o_tau|| per past checkpoint |
//!   ||delta_tau|| per past checkpoint | ||o_t|| | mean, min, max, variance of
//!   o_t]`, target `||delta_t||`;
//! * per run (physics): `[mean, min, max, variance of delta_t, ||delta_t||]`,
//!   target the run's configuration.
//!
//! "Past" means every checkpoint of the window before the last one; the last
//! checkpoint is the current time `t`. Variances are population variances.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::report;
use crate::seed;
use crate::surrogate::{Package, PhysicsConfig};

/// Length of the one-hot configuration encoding.
pub const ENCODED_CONFIG_LEN: usize = 4 + 3 + 2 + 3;

/// One ensemble member's forecast over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    pub config: PhysicsConfig,
    pub window_id: usize,
    /// Predicted observations `o_tau`, one vector per checkpoint.
    pub forecasts: Vec<Vec<f64>>,
    /// Discrepancies `delta_tau`, aligned with `forecasts`.
    pub discrepancies: Vec<Vec<f64>>,
}

impl WindowRun {
    pub fn checkpoints(&self) -> usize {
        self.forecasts.len()
    }

    pub fn m(&self) -> usize {
        self.forecasts.first().map_or(0, Vec::len)
    }

    /// Discrepancy at the current (last) checkpoint.
    pub fn current_discrepancy(&self) -> &[f64] {
        self.discrepancies.last().expect("runs have checkpoints")
    }

    pub fn current_forecast(&self) -> &[f64] {
        self.forecasts.last().expect("runs have checkpoints")
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(cols: usize) -> Self {
        Table {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut t = Table::new(cols);
        for r in rows {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Schema(format!(
                "row has {} columns, table has {}",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Table {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Table {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grain {
    PerGridpoint,
    PerRun,
}

/// Where a dataset row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub config_index: usize,
    pub window_id: usize,
    /// Position in the observation vector; `None` for per-run rows.
    pub point: Option<usize>,
}

/// Training table for error prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDataset {
    pub features: Table,
    pub targets: Table,
    pub feature_schema: Vec<String>,
    pub target_schema: Vec<String>,
    pub grain: Grain,
    pub keys: Vec<RowKey>,
}

/// Discrepancy statistics labelled with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsDataset {
    pub features: Table,
    pub targets: Vec<PhysicsConfig>,
    pub feature_schema: Vec<String>,
    pub keys: Vec<RowKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Datasets whose rows can be subset.
pub trait Rows: Sized {
    fn n_rows(&self) -> usize;
    fn subset(&self, rows: &[usize]) -> Self;
}

impl Rows for ErrorDataset {
    fn n_rows(&self) -> usize {
        self.features.rows()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        ErrorDataset {
            features: self.features.select(rows),
            targets: self.targets.select(rows),
            feature_schema: self.feature_schema.clone(),
            target_schema: self.target_schema.clone(),
            grain: self.grain,
            keys: rows.iter().map(|&r| self.keys[r]).collect(),
        }
    }
}

impl Rows for PhysicsDataset {
    fn n_rows(&self) -> usize {
        self.features.rows()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        PhysicsDataset {
            features: self.features.select(rows),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            feature_schema: self.feature_schema.clone(),
            keys: rows.iter().map(|&r| self.keys[r]).collect(),
        }
    }
}

/// Mean, minimum, maximum and population variance.
pub fn summary_stats(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [mean, min, max, var]
}

/// Hex SHA-256 of the comma-joined column names.
pub fn schema_fingerprint(schema: &[String]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(schema.join(",").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Concatenated one-hot blocks, one block per package.
pub fn encode_config(cfg: &PhysicsConfig) -> Vec<f64> {
    let mut out = vec![0.0; ENCODED_CONFIG_LEN];
    let mut offset = 0;
    for package in Package::ALL {
        out[offset + cfg.option(package)] = 1.0;
        offset += package.option_count();
    }
    out
}

/// Inverse of [`encode_config`]; every block must hold exactly one 1.
pub fn decode_config(encoded: &[f64]) -> Result<PhysicsConfig> {
    if encoded.len() != ENCODED_CONFIG_LEN {
        return Err(Error::Schema(format!(
            "encoded config has {} entries, expected {ENCODED_CONFIG_LEN}",
            encoded.len()
        )));
    }
    let mut options = [0usize; 4];
    let mut offset = 0;
    for (slot, package) in Package::ALL.into_iter().enumerate() {
        let block = &encoded[offset..offset + package.option_count()];
        let ones: Vec<usize> = (0..block.len()).filter(|&i| block[i] == 1.0).collect();
        let zeros = block.iter().filter(|&&v| v == 0.0).count();
        if ones.len() != 1 || zeros != block.len() - 1 {
            return Err(Error::Schema(format!("{package} block {block:?} is not one-hot")));
        }
        options[slot] = ones[0];
        offset += package.option_count();
    }
    Ok(PhysicsConfig::from_option_indices(options).expect("one-hot positions are in range"))
}

/// Picks the largest entry of each block (ties go to the lower option).
pub fn decode_config_argmax(scores: &[f64]) -> Result<PhysicsConfig> {
    if scores.len() != ENCODED_CONFIG_LEN {
        return Err(Error::Schema(format!(
            "config scores have {} entries, expected {ENCODED_CONFIG_LEN}",
            scores.len()
        )));
    }
    let mut options = [0usize; 4];
    let mut offset = 0;
    for (slot, package) in Package::ALL.into_iter().enumerate() {
        let block = &scores[offset..offset + package.option_count()];
        let mut best = 0;
        for (i, &v) in block.iter().enumerate() {
            if v > block[best] {
                best = i;
            }
        }
        options[slot] = best;
        offset += package.option_count();
    }
    Ok(PhysicsConfig::from_option_indices(options).expect("argmax is in range"))
}

pub fn config_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(ENCODED_CONFIG_LEN);
    for package in Package::ALL {
        for option in 0..package.option_count() {
            names.push(format!("theta_{}_{}", package.name(), option));
        }
    }
    names
}

/// Column names of the per-grid-point layout for `checkpoints` per window.
pub fn gridpoint_schema(checkpoints: usize) -> Vec<String> {
    let past = checkpoints - 1;
    let mut names = config_feature_names();
    names.extend((0..past).map(|c| format!("o_tau_{c}_k")));
    names.extend((0..past).map(|c| format!("delta_tau_{c}_k")));
    names.push("o_t_k".into());
    names
}

/// Column names of the per-run norm layout.
pub fn norm_schema(checkpoints: usize) -> Vec<String> {
    let past = checkpoints - 1;
    let mut names = config_feature_names();
    names.extend((0..past).map(|c| format!("norm_o_tau_{c}")));
    names.extend((0..past).map(|c| format!("norm_delta_tau_{c}")));
    names.push("norm_o_t".into());
    for stat in ["mean", "min", "max", "var"] {
        names.push(format!("{stat}_o_t"));
    }
    names
}

pub fn physics_schema() -> Vec<String> {
    ["mean_delta_t", "min_delta_t", "max_delta_t", "var_delta_t", "norm_delta_t"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn physics_target_schema() -> Vec<String> {
    Package::ALL.iter().map(|p| p.name().to_string()).collect()
}

fn check_runs(runs: &[WindowRun]) -> Result<(usize, usize)> {
    let first = runs
        .first()
        .ok_or_else(|| precondition("no runs to build a dataset from"))?;
    let (n, m) = (first.checkpoints(), first.m());
    if n < 2 || m == 0 {
        return Err(Error::Schema(format!(
            "runs need at least 2 checkpoints and 1 observation, got {n} and {m}"
        )));
    }
    for run in runs {
        if run.checkpoints() != n || run.discrepancies.len() != n {
            return Err(Error::Schema(format!(
                "run {} / window {} has {} checkpoints, expected {n}",
                run.config,
                run.window_id,
                run.checkpoints()
            )));
        }
        if run.forecasts.iter().chain(&run.discrepancies).any(|v| v.len() != m) {
            return Err(Error::Schema(format!(
                "run {} / window {} has vectors of length other than {m}",
                run.config, run.window_id
            )));
        }
    }
    Ok((n, m))
}

/// Features of one grid point of one run (the target is not included).
pub fn gridpoint_features(run: &WindowRun, point: usize) -> Vec<f64> {
    let past = run.checkpoints() - 1;
    let mut row = encode_config(&run.config);
    row.extend((0..past).map(|c| run.forecasts[c][point]));
    row.extend((0..past).map(|c| run.discrepancies[c][point]));
    row.push(run.current_forecast()[point]);
    row
}

/// Features of one run in the norm layout.
pub fn norm_features(run: &WindowRun) -> Vec<f64> {
    let past = run.checkpoints() - 1;
    let mut row = encode_config(&run.config);
    row.extend((0..past).map(|c| l2_norm(&run.forecasts[c])));
    row.extend((0..past).map(|c| l2_norm(&run.discrepancies[c])));
    row.push(l2_norm(run.current_forecast()));
    row.extend(summary_stats(run.current_forecast()));
    row
}

/// Physics-mapping features of a discrepancy field.
pub fn physics_features(delta: &[f64]) -> Vec<f64> {
    let mut row = summary_stats(delta).to_vec();
    row.push(l2_norm(delta));
    row
}

/// Physics features of `delta / 2`, derived from those of `delta`: mean,
/// minimum, maximum and norm halve; the variance quarters.
pub fn halve_physics_features(features: &[f64]) -> Vec<f64> {
    vec![
        features[0] / 2.0,
        features[1] / 2.0,
        features[2] / 2.0,
        features[3] / 4.0,
        features[4] / 2.0,
    ]
}

pub fn build_error_records(runs: &[WindowRun]) -> Result<ErrorDataset> {
    let (n, m) = check_runs(runs)?;
    let schema = gridpoint_schema(n);
    let mut features = Table::new(schema.len());
    let mut targets = Table::new(1);
    let mut keys = Vec::with_capacity(runs.len() * m);
    for run in runs {
        for point in 0..m {
            features.push(&gridpoint_features(run, point))?;
            targets.push(&[run.current_discrepancy()[point]])?;
            keys.push(RowKey {
                config_index: run.config.index(),
                window_id: run.window_id,
                point: Some(point),
            });
        }
    }
    finish(features, targets, schema, Grain::PerGridpoint, keys)
}

pub fn build_norm_records(runs: &[WindowRun]) -> Result<ErrorDataset> {
    let (n, _) = check_runs(runs)?;
    let schema = norm_schema(n);
    let mut features = Table::new(schema.len());
    let mut targets = Table::new(1);
    let mut keys = Vec::with_capacity(runs.len());
    for run in runs {
        features.push(&norm_features(run))?;
        targets.push(&[l2_norm(run.current_discrepancy())])?;
        keys.push(RowKey {
            config_index: run.config.index(),
            window_id: run.window_id,
            point: None,
        });
    }
    finish(features, targets, schema, Grain::PerRun, keys)
}

fn finish(
    features: Table,
    targets: Table,
    feature_schema: Vec<String>,
    grain: Grain,
    keys: Vec<RowKey>,
) -> Result<ErrorDataset> {
    if !features.is_finite() || !targets.is_finite() {
        return Err(Error::Schema("dataset contains non-finite entries".into()));
    }
    Ok(ErrorDataset {
        features,
        targets,
        feature_schema,
        target_schema: vec!["target".into()],
        grain,
        keys,
    })
}

pub fn build_physics_records(runs: &[WindowRun]) -> Result<PhysicsDataset> {
    check_runs(runs)?;
    let schema = physics_schema();
    let mut features = Table::new(schema.len());
    for run in runs {
        features.push(&physics_features(run.current_discrepancy()))?;
    }
    if !features.is_finite() {
        return Err(Error::Schema("dataset contains non-finite entries".into()));
    }
    Ok(PhysicsDataset {
        features,
        targets: runs.iter().map(|r| r.config).collect(),
        feature_schema: schema,
        keys: runs
            .iter()
            .map(|r| RowKey {
                config_index: r.config.index(),
                window_id: r.window_id,
                point: None,
            })
            .collect(),
    })
}

/// Seeded shuffle, then the first `ceil(f n)` rows train and the rest test.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(precondition(format!(
            "train fraction must lie strictly between 0 and 1, got {}",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed));
    let n_train = ((spec.train_fraction * n as f64).ceil() as usize).min(n);
    let test = order.split_off(n_train);
    Ok((order, test))
}

pub fn split<D: Rows>(ds: &D, spec: &SplitSpec) -> Result<(D, D)> {
    let (train, test) = split_indices(ds.n_rows(), spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub columns: Vec<String>,
    pub feature_schema: Vec<String>,
    pub target_schema: Vec<String>,
    pub grain: Option<Grain>,
    pub rows: usize,
    pub row_order: String,
    pub config_encoding: String,
    pub variance_convention: String,
    pub seed: u64,
    pub generation: serde_json::Value,
}

fn write_table_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    report::write_csv(path, header, rows.map(|row| row.iter().map(|v| v.to_string()).collect()))
}

fn write_metadata(path: &Path, meta: &DatasetMetadata) -> Result<()> {
    report::write_json(path, meta)
}

const ONE_HOT_NOTE: &str = "one-hot blocks in package order closure(4), forcing(3), dissipation(2), integrator(3)";

impl ErrorDataset {
    pub fn columns(&self) -> Vec<String> {
        self.feature_schema
            .iter()
            .chain(&self.target_schema)
            .cloned()
            .collect()
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, seed: u64, generation: serde_json::Value) -> Result<()> {
        let rows = (0..self.features.rows()).map(|r| {
            let mut row = self.features.row(r).to_vec();
            row.extend_from_slice(self.targets.row(r));
            row
        });
        write_table_csv(&dir.join(format!("{stem}.csv")), &self.columns(), rows)?;
        let row_order = match self.grain {
            Grain::PerGridpoint => "run-major (construction order), observed point minor",
            Grain::PerRun => "one row per run, construction order",
        };
        write_metadata(
            &dir.join(format!("{stem}.json")),
            &DatasetMetadata {
                columns: self.columns(),
                feature_schema: self.feature_schema.clone(),
                target_schema: self.target_schema.clone(),
                grain: Some(self.grain),
                rows: self.features.rows(),
                row_order: row_order.into(),
                config_encoding: ONE_HOT_NOTE.into(),
                variance_convention: "population (divide by m)".into(),
                seed,
                generation,
            },
        )
    }
}

impl PhysicsDataset {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = self.feature_schema.clone();
        cols.extend(physics_target_schema());
        cols
    }

    pub fn write(&self, dir: &Path, stem: &str, seed: u64, generation: serde_json::Value) -> Result<()> {
        let rows = (0..self.features.rows()).map(|r| {
            let mut row = self.features.row(r).to_vec();
            row.extend(self.targets[r].option_indices().iter().map(|&o| o as f64));
            row
        });
        write_table_csv(&dir.join(format!("{stem}.csv")), &self.columns(), rows)?;
        write_metadata(
            &dir.join(format!("{stem}.json")),
            &DatasetMetadata {
                columns: self.columns(),
                feature_schema: self.feature_schema.clone(),
                target_schema: physics_target_schema(),
                grain: None,
                rows: self.features.rows(),
                row_order: "one row per run, construction order".into(),
                config_encoding: "targets are option indices per package".into(),
                variance_convention: "population (divide by m)".into(),
                seed,
                generation,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn run(cfg: PhysicsConfig, window_id: usize, n: usize, m: usize, base: f64) -> WindowRun {
        WindowRun {
            config: cfg,
            window_id,
            forecasts: (0..n)
                .map(|c| (0..m).map(|k| base + c as f64 + 0.1 * k as f64).collect())
                .collect(),
            discrepancies: (0..n)
                .map(|c| (0..m).map(|k| base * 0.01 - 0.02 * c as f64 + 0.001 * k as f64).collect())
                .collect(),
        }
    }

    #[test]
    fn gridpoint_layout_counts() {
        let ds = build_error_records(&[run(PhysicsConfig::reference(), 1, 3, 2, 1.0)]).unwrap();
        assert_eq!(ds.features.rows(), 2);
        assert_eq!(ds.features.cols(), 17);
        assert_eq!(ds.feature_schema.len(), 17);
        assert_eq!(ds.grain, Grain::PerGridpoint);
    }

    #[test]
    fn gridpoint_rows_reproduce_run_arrays() {
        let runs: Vec<WindowRun> = PhysicsConfig::all()
            .map(|cfg| run(cfg, 1, 7, 40, cfg.index() as f64))
            .collect();
        let ds = build_error_records(&runs).unwrap();
        assert_eq!(ds.features.rows(), 2880);
        for r in &runs {
            for k in 0..40 {
                let row = ds
                    .keys
                    .iter()
                    .position(|key| {
                        key.config_index == r.config.index() && key.window_id == 1 && key.point == Some(k)
                    })
                    .unwrap();
                let f = ds.features.row(row);
                assert_eq!(&f[..12], encode_config(&r.config).as_slice());
                for c in 0..6 {
                    assert_eq!(f[12 + c], r.forecasts[c][k]);
                    assert_eq!(f[18 + c], r.discrepancies[c][k]);
                }
                assert_eq!(f[24], r.forecasts[6][k]);
                assert_eq!(ds.targets.get(row, 0), r.discrepancies[6][k]);
            }
        }
    }

    #[test]
    fn target_never_leaks_into_features() {
        let mut r = run(PhysicsConfig::reference(), 0, 4, 3, 2.0);
        let before = gridpoint_features(&r, 1);
        r.discrepancies[3][1] = 1234.5;
        assert_eq!(gridpoint_features(&r, 1), before);
        assert!(!gridpoint_schema(4).iter().any(|c| c == "delta_t_k" || c == "target"));
    }

    #[test]
    fn inconsistent_checkpoints_rejected() {
        let a = run(PhysicsConfig::reference(), 0, 4, 3, 0.0);
        let b = run(PhysicsConfig::uncoupled(), 0, 5, 3, 0.0);
        assert!(matches!(build_error_records(&[a, b]), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_discrepancy_gives_zero_targets() {
        let mut r = run(PhysicsConfig::reference(), 0, 4, 3, 1.0);
        for d in &mut r.discrepancies {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let ds = build_error_records(std::slice::from_ref(&r)).unwrap();
        assert!(ds.targets.column(0).iter().all(|&t| t == 0.0));
        assert_eq!(build_norm_records(&[r]).unwrap().targets.get(0, 0), 0.0);
    }

    #[test]
    fn norm_layout_recomputes() {
        let r = run(PhysicsConfig::reference(), 0, 7, 5, 1.5);
        let ds = build_norm_records(std::slice::from_ref(&r)).unwrap();
        let f = ds.features.row(0);
        assert_eq!(f.len(), ds.feature_schema.len());
        for c in 0..6 {
            let on: f64 = r.forecasts[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            let dn: f64 = r.discrepancies[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((f[12 + c] - on).abs() < 1e-12);
            assert!((f[18 + c] - dn).abs() < 1e-12);
        }
        let cur = &r.forecasts[6];
        let mean = cur.iter().sum::<f64>() / 5.0;
        let var = cur.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!((f[25] - mean).abs() < 1e-12);
        assert_eq!(f[26], cur.iter().cloned().fold(f64::MAX, f64::min));
        assert_eq!(f[27], cur.iter().cloned().fold(f64::MIN, f64::max));
        assert!((f[28] - var).abs() < 1e-12);
        let target: f64 = r.discrepancies[6].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ds.targets.get(0, 0) - target).abs() < 1e-12);
    }

    #[test]
    fn physics_stats_by_hand() {
        let f = physics_features(&[1.0, 2.0, 3.0]);
        assert_eq!(f[0], 2.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[2], 3.0);
        assert!((f[3] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f[4] - 14f64.sqrt()).abs() < 1e-15);
        let c = physics_features(&[-0.5; 6]);
        assert_eq!(&c[..3], &[-0.5, -0.5, -0.5]);
        assert_eq!(c[3], 0.0);
        assert!((c[4] - 0.5 * 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn halving_matches_direct_recomputation() {
        let delta = [0.3, -1.2, 0.7, 2.5, -0.05];
        let halved: Vec<f64> = delta.iter().map(|v| v / 2.0).collect();
        let direct = physics_features(&halved);
        let derived = halve_physics_features(&physics_features(&delta));
        for (a, b) in direct.iter().zip(&derived) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn physics_rows_cover_all_configs() {
        let runs: Vec<WindowRun> = PhysicsConfig::all().map(|c| run(c, 0, 3, 4, 0.5)).collect();
        let ds = build_physics_records(&runs).unwrap();
        assert_eq!(ds.n_rows(), 72);
        let mut labels: Vec<usize> = ds.targets.iter().map(|c| c.index()).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 72);
    }

    #[test]
    fn encoding_is_one_hot_and_invertible() {
        let zero = PhysicsConfig::from_option_indices([0, 0, 0, 0]).unwrap();
        let e = encode_config(&zero);
        let ones: Vec<usize> = (0..12).filter(|&i| e[i] == 1.0).collect();
        assert_eq!(ones, vec![0, 4, 7, 9]);
        let mut seen = std::collections::HashSet::new();
        for cfg in PhysicsConfig::all() {
            let e = encode_config(&cfg);
            assert_eq!(decode_config(&e).unwrap(), cfg);
            assert_eq!(decode_config_argmax(&e).unwrap(), cfg);
            assert!(seen.insert(e.iter().map(|v| *v as u8).collect::<Vec<_>>()));
        }
        assert!(decode_config(&[0.0; 12]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (train, test) = split_indices(10, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(
            split_indices(10, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap(),
            (train.clone(), test.clone())
        );
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(10, &SplitSpec { train_fraction: 1.0, seed: 3 }).is_err());
    }

    #[test]
    fn split_preserves_row_multiset() {
        let runs: Vec<WindowRun> = PhysicsConfig::all().take(9).map(|c| run(c, 0, 3, 2, c.index() as f64)).collect();
        let ds = build_error_records(&runs).unwrap();
        let (a, b) = split(&ds, &SplitSpec { train_fraction: 0.7, seed: 9 }).unwrap();
        let key = |t: &Table, r: usize| t.row(r).iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let mut original: Vec<_> = (0..ds.n_rows()).map(|r| key(&ds.features, r)).collect();
        let mut joined: Vec<_> = (0..a.n_rows())
            .map(|r| key(&a.features, r))
            .chain((0..b.n_rows()).map(|r| key(&b.features, r)))
            .collect();
        original.sort();
        joined.sort();
        assert_eq!(original, joined);
    }

    #[test]
    fn csv_header_matches_schema() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_error_records(&[run(PhysicsConfig::reference(), 0, 3, 2, 1.0)]).unwrap();
        ds.write(dir.path(), "pointwise", 5, serde_json::json!({})).unwrap();
        let mut reader = csv::Reader::from_path(dir.path().join("pointwise.csv")).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ds.columns());
        assert_eq!(header.last().unwrap(), "target");
        assert_eq!(reader.records().count(), 2);
        let meta: DatasetMetadata =
            serde_json::from_str(&fs::read_to_string(dir.path().join("pointwise.json")).unwrap()).unwrap();
        assert_eq!(meta.feature_schema, ds.feature_schema);
        assert_eq!(meta.seed, 5);
    }
}
