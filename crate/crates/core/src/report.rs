//! Writing experiment outputs: CSV tables, JSON summaries, plot data and a
//! manifest of content hashes.
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! crashed run never leaves a half-written artefact behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentSpec;
use crate::error::Result;
use crate::pipelines::{NormReport, PhysicsReport, PointwiseReport};
use crate::seed;
use crate::surrogate::Package;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &json_bytes(value)?)
}

pub fn csv_bytes<S: AsRef<str>>(header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.into_inner().map_err(|e| crate::Error::Io(e.into_error()))
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn num(v: f64) -> String {
    v.to_string()
}

/// `index,value` rows for a field plot.
fn field_rows(values: &[f64]) -> Vec<Vec<String>> {
    values.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect()
}

/// Writes the pointwise report and returns the files written.
pub fn write_pointwise(dir: &Path, report: &PointwiseReport) -> Result<Vec<PathBuf>> {
    let tag = report.learner.label();
    let table = dir.join(format!("pointwise_{tag}.csv"));
    write_csv(
        &table,
        &[
            "config_index",
            "config",
            "prediction_rmse",
            "zero_baseline_rmse",
            "raw_rmse",
            "corrected_rmse",
            "raw_mean_abs",
            "corrected_mean_abs",
        ],
        report.rows.iter().map(|r| {
            vec![
                r.config_index.to_string(),
                r.config.clone(),
                num(r.prediction_rmse),
                num(r.zero_baseline_rmse),
                num(r.raw_rmse),
                num(r.corrected_rmse),
                num(r.raw_mean_abs),
                num(r.corrected_mean_abs),
            ]
        }),
    )?;
    let summary = dir.join(format!("pointwise_{tag}_summary.csv"));
    write_csv(
        &summary,
        &["label", "min_mean_abs", "avg_mean_abs", "max_mean_abs", "min_rmse", "avg_rmse", "max_rmse"],
        [&report.raw, &report.corrected].into_iter().map(|s| {
            vec![
                s.label.clone(),
                num(s.min_mean_abs),
                num(s.avg_mean_abs),
                num(s.max_mean_abs),
                num(s.min_rmse),
                num(s.avg_rmse),
                num(s.max_rmse),
            ]
        }),
    )?;
    let raw = dir.join(format!("field_raw_{tag}.csv"));
    write_csv(&raw, &["index", "value"], field_rows(&report.raw_field))?;
    let corrected = dir.join(format!("field_corrected_{tag}.csv"));
    write_csv(&corrected, &["index", "value"], field_rows(&report.corrected_field))?;
    let json = dir.join(format!("pointwise_{tag}.json"));
    write_json(&json, report)?;
    Ok(vec![table, summary, raw, corrected, json])
}

pub fn write_norm(dir: &Path, report: &NormReport) -> Result<Vec<PathBuf>> {
    let table = dir.join("norm.csv");
    write_csv(
        &table,
        &["config_index", "config", "true_norm", "rf_norm", "nn_norm", "true_rank", "rf_rank", "nn_rank"],
        report.rows.iter().map(|r| {
            vec![
                r.config_index.to_string(),
                r.config.clone(),
                num(r.true_norm),
                num(r.rf_norm),
                num(r.nn_norm),
                r.true_rank.to_string(),
                r.rf_rank.to_string(),
                r.nn_rank.to_string(),
            ]
        }),
    )?;
    let json = dir.join("norm.json");
    write_json(&json, report)?;
    Ok(vec![table, json])
}

pub fn write_physics(dir: &Path, report: &PhysicsReport) -> Result<Vec<PathBuf>> {
    let stem = if report.planted { "attribution_planted" } else { "attribution" };
    let mut files = Vec::new();
    for skill in &report.skills {
        let path = dir.join(format!("{stem}_histogram_{}.csv", skill.learner.label()));
        write_csv(
            &path,
            &["package", "count"],
            Package::ALL
                .iter()
                .map(|p| vec![p.name().to_string(), skill.histogram.count(*p).to_string()]),
        )?;
        files.push(path);
    }
    let json = dir.join(format!("{stem}.json"));
    write_json(&json, report)?;
    files.push(json);
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// Per-component seeds derived from `seed`.
    pub component_seeds: BTreeMap<String, u64>,
    pub spec_sha256: String,
    pub files: Vec<ManifestEntry>,
}

const COMPONENTS: [&str; 8] = [
    "truth",
    "forest-pointwise",
    "forest-norm",
    "forest-physics",
    "network-pointwise",
    "network-norm",
    "network-physics",
    "baseline",
];

pub fn component_seeds(master: u64) -> BTreeMap<String, u64> {
    COMPONENTS
        .iter()
        .map(|c| (c.to_string(), seed::derive_seed(master, c)))
        .collect()
}

/// Hashes `files` (named relative to `dir`) and writes `manifest.json` plus the
/// resolved spec as `spec.toml`.
pub fn write_manifest(dir: &Path, spec: &ExperimentSpec, files: &[PathBuf]) -> Result<PathBuf> {
    let spec_text = spec.to_toml();
    write_atomic(&dir.join("spec.toml"), spec_text.as_bytes())?;
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let name = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().into_owned();
        entries.push(ManifestEntry {
            file: name,
            sha256: sha256_hex(&fs::read(f)?),
        });
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = Manifest {
        seed: spec.seed,
        component_seeds: component_seeds(spec.seed),
        spec_sha256: sha256_hex(spec_text.as_bytes()),
        files: entries,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn csv_quotes_when_needed() {
        let bytes = csv_bytes(&["a", "b"], [vec!["x,y".to_string(), "1".to_string()]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n\"x,y\",1\n");
    }

    #[test]
    fn manifest_lists_hashes_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("b.csv");
        let a = dir.path().join("a.csv");
        write_atomic(&b, b"bee").unwrap();
        write_atomic(&a, b"ay").unwrap();
        let path = write_manifest(dir.path(), &ExperimentSpec::default(), &[b, a]).unwrap();
        let m: Manifest = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        assert_eq!(m.files[0].file, "a.csv");
        assert_eq!(m.files[1].sha256, sha256_hex(b"bee"));
        assert_eq!(m.seed, ExperimentSpec::default().seed);
    }
}
