//! Experiment dispatch and artefact persistence.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use errcast_core::config::{parse_config, ExperimentSpec, LearnerKind};
use errcast_core::dataset::{build_error_records, build_norm_records, build_physics_records, Grain};
use errcast_core::pipelines::{
    self, norm_experiment, physics_experiment, pointwise_experiment, predict_next_window_error, predict_norm,
    train_error_model, train_physics_model, CorrectionSource, ErrorPredictor, Experiment as Twin, PhysicsPredictor,
};
use errcast_core::report::{self, sha256_hex};
use errcast_core::surrogate::{PhysicsConfig, Surrogate};
use errcast_core::{Error, ErrorClass};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Pointwise,
    Norm,
    Physics,
}

impl Target {
    fn label(self) -> &'static str {
        match self {
            Target::Pointwise => "pointwise",
            Target::Norm => "norm",
            Target::Physics => "physics",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Generate,
    Train(Target),
    Predict(PathBuf),
    Pointwise,
    Norm,
    Attribute { planted: bool },
    Report,
    FitClosure { steps: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub learner: Option<LearnerKind>,
}

#[derive(Debug)]
pub enum CliError {
    /// The config could not be read, parsed or validated.
    Config(Error),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let class = match self {
            CliError::Config(_) => ErrorClass::Config,
            CliError::Run(e) => e.class(),
        };
        match class {
            ErrorClass::Config => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config: {e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// A trained model with the spec it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub target: Target,
    pub seed: u64,
    pub spec_sha256: String,
    pub model: SavedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SavedModel {
    Error(ErrorPredictor),
    Physics(PhysicsPredictor),
}

pub fn load_spec(rc: &RunConfig) -> Result<ExperimentSpec> {
    let mut spec = match &rc.config {
        Some(path) => parse_config(path).map_err(CliError::Config)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = rc.seed {
        spec.seed = seed;
    }
    if let Some(kind) = rc.learner {
        spec.learner.kind = kind;
    }
    spec.validate().map_err(CliError::Config)?;
    Ok(spec)
}

/// Runs the selected experiment; returns every file written, manifest last.
pub fn dispatch(rc: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = load_spec(rc)?;
    let out = rc.out.as_path();
    let mut files = match &rc.experiment {
        Experiment::Generate => generate(&spec, out)?,
        Experiment::Train(target) => vec![train(&spec, *target, out)?],
        Experiment::Predict(model) => vec![predict(&spec, model, out)?],
        Experiment::Pointwise => {
            let twin = Twin::prepare(&spec)?;
            let rep = pointwise_experiment(&twin, spec.learner.kind, CorrectionSource::Predicted)?;
            report::write_pointwise(out, &rep)?
        }
        Experiment::Norm => report::write_norm(out, &pipelines::run_problem_one_norm(&spec)?)?,
        Experiment::Attribute { planted } => {
            report::write_physics(out, &pipelines::run_problem_two(&spec, *planted)?)?
        }
        Experiment::Report => full_report(&spec, out)?,
        Experiment::FitClosure { steps, stride } => fit_closure(&spec, rc.seed.unwrap_or(1), *steps, *stride, out)?,
    };
    let manifest = report::write_manifest(out, &spec, &files)?;
    files.push(out.join("spec.toml"));
    files.push(manifest);
    Ok(files)
}

fn generate(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>> {
    let twin = Twin::prepare(spec)?;
    let w = &spec.windows;
    let mut files = Vec::new();
    let mut record = |stem: &str, write: &dyn Fn(&str) -> errcast_core::Result<()>| -> Result<()> {
        write(stem)?;
        files.push(out.join(format!("{stem}.csv")));
        files.push(out.join(format!("{stem}.json")));
        Ok(())
    };
    for (role, window) in [("train", w.train_window), ("test", w.test_window)] {
        let runs = twin.ensemble_runs(window)?;
        let generation = json!({ "role": role, "window": window });
        let pointwise = build_error_records(&runs)?;
        record(&format!("pointwise_{role}"), &|s| pointwise.write(out, s, spec.seed, generation.clone()))?;
        let norm = build_norm_records(&runs)?;
        record(&format!("norm_{role}"), &|s| norm.write(out, s, spec.seed, generation.clone()))?;
    }
    let p = &spec.physics;
    for (role, windows) in [("train", &p.train_windows), ("test", &p.test_windows)] {
        let mut runs = Vec::new();
        for &window in windows {
            runs.extend(twin.ensemble_runs(window)?);
        }
        let physics = build_physics_records(&runs)?;
        let generation = json!({ "role": role, "windows": windows });
        record(&format!("physics_{role}"), &|s| physics.write(out, s, spec.seed, generation.clone()))?;
    }
    Ok(files)
}

fn physics_runs(twin: &Twin, windows: &[usize]) -> Result<Vec<errcast_core::dataset::WindowRun>> {
    let mut runs = Vec::new();
    for &window in windows {
        runs.extend(twin.ensemble_runs(window)?);
    }
    Ok(runs)
}

fn train(spec: &ExperimentSpec, target: Target, out: &Path) -> Result<PathBuf> {
    let twin = Twin::prepare(spec)?;
    let kind = spec.learner.kind;
    let model = match target {
        Target::Pointwise | Target::Norm => {
            let grain = if target == Target::Pointwise { Grain::PerGridpoint } else { Grain::PerRun };
            let runs = twin.ensemble_runs(spec.windows.train_window)?;
            SavedModel::Error(train_error_model(&runs, grain, kind, spec)?)
        }
        Target::Physics => {
            let runs = physics_runs(&twin, &spec.physics.train_windows)?;
            SavedModel::Physics(train_physics_model(&build_physics_records(&runs)?, kind, spec)?)
        }
    };
    let file = ModelFile {
        target,
        seed: spec.seed,
        spec_sha256: sha256_hex(spec.to_toml().as_bytes()),
        model,
    };
    let path = out.join(format!("model_{}_{}.json", target.label(), kind.label()));
    report::write_json(&path, &file)?;
    Ok(path)
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(Error::from)?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn predict(spec: &ExperimentSpec, model_path: &Path, out: &Path) -> Result<PathBuf> {
    let file = read_model(model_path)?;
    let twin = Twin::prepare(spec)?;
    let path = out.join(format!("predictions_{}.csv", file.target.label()));
    match (&file.model, file.target) {
        (SavedModel::Error(model), Target::Pointwise) => {
            let mut rows = Vec::new();
            for run in twin.ensemble_runs(spec.windows.test_window)? {
                let predicted = predict_next_window_error(model, &run)?;
                for (k, (p, a)) in predicted.values.iter().zip(run.current_discrepancy()).enumerate() {
                    rows.push(vec![run.config.index().to_string(), run.config.label(), k.to_string(), num(*p), num(*a)]);
                }
            }
            report::write_csv(&path, &["config_index", "config", "point", "predicted", "actual"], rows)?;
        }
        (SavedModel::Error(model), Target::Norm) => {
            let mut rows = Vec::new();
            for run in twin.ensemble_runs(spec.windows.test_window)? {
                let actual = errcast_core::dataset::l2_norm(run.current_discrepancy());
                rows.push(vec![
                    run.config.index().to_string(),
                    run.config.label(),
                    num(predict_norm(model, &run)?),
                    num(actual),
                ]);
            }
            report::write_csv(&path, &["config_index", "config", "predicted_norm", "actual_norm"], rows)?;
        }
        (SavedModel::Physics(model), Target::Physics) => {
            let runs = physics_runs(&twin, &spec.physics.test_windows)?;
            let data = build_physics_records(&runs)?;
            let rows = data.features.iter_rows().zip(&data.targets).zip(&runs).map(|((x, truth), run)| {
                let guess: PhysicsConfig = model.predict(x);
                vec![run.window_id.to_string(), truth.label(), guess.label()]
            });
            report::write_csv(&path, &["window", "true_config", "predicted_config"], rows.collect::<Vec<_>>())?;
        }
        _ => {
            return Err(CliError::Run(Error::Schema(format!(
                "model file {} does not hold a {} model",
                model_path.display(),
                file.target.label()
            ))))
        }
    }
    Ok(path)
}

fn full_report(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>> {
    let twin = Twin::prepare(spec)?;
    let planted_twin = Twin::prepare_planted(spec)?;
    let mut files = Vec::new();
    let mut pointwise = serde_json::Map::new();
    for kind in LearnerKind::ALL {
        let rep = pointwise_experiment(&twin, kind, CorrectionSource::Predicted)?;
        files.extend(report::write_pointwise(out, &rep)?);
        pointwise.insert(
            kind.label().into(),
            json!({
                "reduction": rep.reduction(),
                "corrected_win_rate": rep.corrected_win_rate(),
                "prediction_win_rate": rep.prediction_win_rate(),
                "raw_avg_mean_abs": rep.raw.avg_mean_abs,
                "corrected_avg_mean_abs": rep.corrected.avg_mean_abs,
            }),
        );
    }
    let norm = norm_experiment(&twin)?;
    files.extend(report::write_norm(out, &norm)?);
    let mut attribution = serde_json::Map::new();
    for (label, exp, planted) in [("default", &twin, false), ("planted", &planted_twin, true)] {
        let rep = physics_experiment(exp, planted)?;
        files.extend(report::write_physics(out, &rep)?);
        let skills: serde_json::Map<String, serde_json::Value> = rep
            .skills
            .iter()
            .map(|s| {
                (
                    s.learner.label().to_string(),
                    json!({
                        "counts": s.histogram.counts,
                        "dominant": s.histogram.dominant().map(|p| p.name()),
                        "validation_rmse": s.validation_rmse,
                    }),
                )
            })
            .collect();
        attribution.insert(
            label.into(),
            json!({
                "package_spreads": rep.package_spreads,
                "dominance_ratio": rep.dominance_ratio(),
                "random_baseline_rmse": rep.random_baseline_rmse,
                "learners": skills,
            }),
        );
    }
    let norm_skills: serde_json::Map<String, serde_json::Value> = norm
        .skills
        .iter()
        .map(|s| {
            (
                s.learner.label().to_string(),
                json!({ "rmse": s.rmse, "spearman": s.spearman, "predicted_top": s.predicted_top, "true_best_in_top": s.true_best_in_top }),
            )
        })
        .collect();
    let summary = out.join("summary.json");
    report::write_json(
        &summary,
        &json!({
            "pointwise": pointwise,
            "norm": { "true_best": norm.true_best, "top_k": norm.top_k, "learners": norm_skills },
            "attribution": attribution,
        }),
    )?;
    files.push(summary);
    Ok(files)
}

#[derive(Serialize)]
struct ClosureTable {
    linear_damping: f64,
    quadratic: [f64; 3],
    cubic: [f64; 4],
}

#[derive(Serialize)]
struct ClosureSection {
    packages: ClosureTable,
}

fn fit_closure(spec: &ExperimentSpec, seed: u64, steps: usize, stride: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let surrogate = Surrogate::new(spec.surrogate.clone(), spec.packages.clone())?;
    let fit = surrogate.fit_closures_from_run(seed, spec.windows.spinup_steps, steps, stride)?;
    let section = ClosureSection {
        packages: ClosureTable {
            linear_damping: fit.linear_damping,
            quadratic: fit.quadratic,
            cubic: fit.cubic,
        },
    };
    let text = toml::to_string(&section).map_err(|e| Error::Config(e.to_string()))?;
    let toml_path = out.join("closure.toml");
    report::write_atomic(&toml_path, text.as_bytes())?;
    let json_path = out.join("closure.json");
    report::write_json(&json_path, &fit)?;
    Ok(vec![toml_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rc(config: Option<PathBuf>) -> RunConfig {
        RunConfig {
            experiment: Experiment::Norm,
            config,
            out: PathBuf::from("unused"),
            seed: Some(9),
            learner: Some(LearnerKind::Nn),
        }
    }

    #[test]
    fn overrides_apply_on_top_of_defaults() {
        let spec = load_spec(&rc(None)).unwrap();
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.learner.kind, LearnerKind::Nn);
        assert_eq!(spec.forest, ExperimentSpec::default().forest);
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let err = load_spec(&rc(Some(PathBuf::from("/nonexistent/errcast.toml")))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Run(Error::Singular("x".into())).exit_code(), 3);
        assert_eq!(CliError::Run(Error::Io(std::io::Error::other("x"))).exit_code(), 4);
        assert_eq!(CliError::Run(Error::Schema("x".into())).exit_code(), 2);
    }
}
