//! The batch pipeline: stages that read and write the JSON/CSV artifacts
//! of a run directory.
//!
//! ```text
//! <out>/<bundle>/mutants.json     mutate
//! <out>/<bundle>/killmatrix.json  mutate
//! <out>/<bundle>/traces.json      propagate
//! <out>/<bundle>/summary.json     propagate
//! <out>/<bundle>/changes.json     propagate
//! <out>/<bundle>/features.csv     features
//! <out>/model.json, cv.json       train
//! <out>/report.md, report.csv     report
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::astmatch::{classify_with, match_trees, ChangeClass};
use crate::evalmetrics::{build_report, report_csv, report_md};
use crate::forest::{cross_validate, train, CvConfig, Dataset, FoldStrategy, ForestConfig, ForestError, ForestModel, Row};
use crate::histfeat::{feature_rows, from_csv, to_csv, FEATURE_NAMES};
use crate::histstore::{load_bundle_with, read_manifest, BundleError, HistoryBundle};
use crate::lifecycle::{propagate, summarize, LifecycleError, PropagateConfig, PropagationTrace};
use crate::mutgen::{generate_mutants, Mutant, MutantRecord};
use crate::runner::{kill_matrix, InitialStatus, KillResult, RunnerError, DEFAULT_STEP_BUDGET};

/// Settings of a run, stored as `run.json`; command-line flags override it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub bundles: Vec<PathBuf>,
    pub n_thr_days: i64,
    pub step_budget: u64,
    pub seed: u64,
    pub k_folds: usize,
    pub repeats: usize,
    pub ablate_mut_op: bool,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub fold_strategy: FoldStrategy,
    pub baseline_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bundles: vec![],
            n_thr_days: 365,
            step_budget: DEFAULT_STEP_BUDGET,
            seed: 0,
            k_folds: 5,
            repeats: 10,
            ablate_mut_op: false,
            out: PathBuf::from("out"),
            jobs: None,
            fold_strategy: FoldStrategy::Stratified,
            baseline_trials: 1000,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        read_json(path, Stage::Config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn propagate_config(&self) -> PropagateConfig {
        PropagateConfig {
            n_thr_days: self.n_thr_days,
            step_budget: self.step_budget,
            live_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Mutate,
    Propagate,
    Features,
    Train,
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    BrokenSuite(#[from] RunnerError),
    #[error("propagation failed: {0}")]
    Propagation(#[from] LifecycleError),
    #[error("feature extraction failed: {0}")]
    Features(String),
    #[error("training failed: {0}")]
    Training(#[from] ForestError),
    #[error("{path}: {message}")]
    Artifact { stage: Stage, path: PathBuf, message: String },
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Bundle(BundleError::BrokenSuite { .. }) | PipelineError::BrokenSuite(_) => 3,
            PipelineError::Bundle(_) => 2,
            PipelineError::Propagation(_) => 4,
            PipelineError::Features(_) => 5,
            PipelineError::Training(_) => 6,
            PipelineError::Artifact { stage, .. } => match stage {
                Stage::Config => 1,
                Stage::Mutate => 2,
                Stage::Propagate => 4,
                Stage::Features => 5,
                Stage::Train | Stage::Report => 6,
            },
        }
    }
}

fn artifact(stage: Stage, path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Artifact {
        stage,
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| artifact(stage, path, e))?;
    serde_json::from_str(&text).map_err(|e| artifact(stage, path, e))
}

fn write_text(path: &Path, text: &str, stage: Stage) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| artifact(stage, dir, e))?;
    }
    fs::write(path, text).map_err(|e| artifact(stage, path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: Stage) -> Result<(), PipelineError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"), stage)
}

/// Output directory of one bundle.
pub fn bundle_out(cfg: &RunConfig, bundle_dir: &Path) -> Result<PathBuf, PipelineError> {
    Ok(cfg.out.join(read_manifest(bundle_dir)?.name))
}

fn load(cfg: &RunConfig, bundle_dir: &Path) -> Result<HistoryBundle, PipelineError> {
    Ok(load_bundle_with(bundle_dir, cfg.step_budget)?)
}

/// Mutants of every file at the injection revision.
pub fn all_mutants(bundle: &HistoryBundle) -> Vec<Mutant> {
    let inj = bundle.injection();
    inj.files
        .values()
        .flat_map(|f| generate_mutants(inj.program(&f.path).expect("parsed"), f, bundle.injection_index))
        .collect()
}

/// Write `mutants.json` and `killmatrix.json`.
pub fn stage_mutate(cfg: &RunConfig, bundle_dir: &Path) -> Result<(), PipelineError> {
    let bundle = load(cfg, bundle_dir)?;
    let out = cfg.out.join(&bundle.name);
    let inj = bundle.injection();
    let mutants = all_mutants(&bundle);
    let mut matrix: BTreeMap<String, KillResult> = BTreeMap::new();
    for (path, program) in &inj.programs {
        let ms: Vec<Mutant> = mutants.iter().filter(|m| &m.file == path).cloned().collect();
        matrix.extend(kill_matrix(program, &ms, &inj.tests, cfg.step_budget)?);
    }
    let records: Vec<MutantRecord> = mutants
        .iter()
        .map(|m| MutantRecord::new(m, inj.text(&m.file).expect("file")))
        .collect();
    write_json(&out.join("mutants.json"), &records, Stage::Mutate)?;
    write_json(&out.join("killmatrix.json"), &matrix, Stage::Mutate)
}

fn read_mutants(bundle: &HistoryBundle, out: &Path, stage: Stage) -> Result<Vec<Mutant>, PipelineError> {
    let path = out.join("mutants.json");
    let records: Vec<MutantRecord> = read_json(&path, stage)?;
    let inj = bundle.injection();
    records
        .iter()
        .map(|r| {
            let text = inj
                .text(&r.file)
                .ok_or_else(|| artifact(stage, &path, format!("unknown file {}", r.file)))?;
            r.restore(text).map_err(|e| artifact(stage, &path, e))
        })
        .collect()
}

/// One file between two consecutive revisions, as stored in `changes.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub from: usize,
    pub to: usize,
    pub file: String,
    pub class: ChangeClass,
    pub mapped_pairs: usize,
    pub touched_lines: Vec<TouchedLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchedLine {
    pub line: u32,
    pub semantic: bool,
}

/// Change classification of every file present in consecutive revisions
/// from the injection revision on.
pub fn changes(bundle: &HistoryBundle) -> Vec<ChangeRecord> {
    let mut out = Vec::new();
    for r in bundle.injection_index + 1..bundle.len() {
        let (prev, cur) = (&bundle.revisions[r - 1], &bundle.revisions[r]);
        for (path, po) in &prev.programs {
            let Some(pn) = cur.program(path) else { continue };
            let mapping = match_trees(po, pn);
            let c = classify_with(prev.text(path).expect("text"), po, cur.text(path).expect("text"), pn, &mapping);
            out.push(ChangeRecord {
                from: r - 1,
                to: r,
                file: path.clone(),
                class: c.class,
                mapped_pairs: c.mapped_pairs,
                touched_lines: c
                    .lines
                    .iter()
                    .filter(|(_, f)| f.touched)
                    .map(|(&line, f)| TouchedLine {
                        line,
                        semantic: f.semantic,
                    })
                    .collect(),
            });
        }
    }
    out
}

/// Write `traces.json`, `summary.json` and `changes.json`.
pub fn stage_propagate(cfg: &RunConfig, bundle_dir: &Path) -> Result<(), PipelineError> {
    let bundle = load(cfg, bundle_dir)?;
    let out = cfg.out.join(&bundle.name);
    let mutants = read_mutants(&bundle, &out, Stage::Propagate)?;
    let matrix: BTreeMap<String, KillResult> = read_json(&out.join("killmatrix.json"), Stage::Propagate)?;
    let live: Vec<Mutant> = mutants
        .into_iter()
        .filter(|m| matrix.get(&m.mutant_id).is_some_and(|k| k.status == InitialStatus::Live))
        .collect();
    let traces = propagate(&bundle, &live, &cfg.propagate_config())?;
    write_json(&out.join("traces.json"), &traces, Stage::Propagate)?;
    write_json(&out.join("summary.json"), &summarize(&traces), Stage::Propagate)?;
    write_json(&out.join("changes.json"), &changes(&bundle), Stage::Propagate)
}

/// Write `features.csv`.
pub fn stage_features(cfg: &RunConfig, bundle_dir: &Path) -> Result<(), PipelineError> {
    let bundle = load(cfg, bundle_dir)?;
    let out = cfg.out.join(&bundle.name);
    let mutants = read_mutants(&bundle, &out, Stage::Features)?;
    let traces: Vec<PropagationTrace> = read_json(&out.join("traces.json"), Stage::Features)?;
    let rows = feature_rows(&bundle, &mutants, &traces).map_err(|e| PipelineError::Features(e.to_string()))?;
    write_text(&out.join("features.csv"), &to_csv(&rows), Stage::Features)
}

/// The pooled training set over all bundles of the run. Row ids are
/// `<bundle>/<mutant id>` and rows are grouped by `<bundle>@<revision>`.
pub fn dataset(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let mut rows = Vec::new();
    for dir in &cfg.bundles {
        let manifest = read_manifest(dir)?;
        let rev = manifest
            .revisions
            .get(manifest.injection_index)
            .ok_or(BundleError::InjectionOutOfRange {
                index: manifest.injection_index,
                len: manifest.revisions.len(),
            })?;
        let path = cfg.out.join(&manifest.name).join("features.csv");
        let text = fs::read_to_string(&path).map_err(|e| artifact(Stage::Train, &path, e))?;
        for r in from_csv(&text).map_err(|e| artifact(Stage::Train, &path, e))? {
            rows.push(Row {
                id: format!("{}/{}", manifest.name, r.mutant_id),
                group: format!("{}@{}", manifest.name, rev.id),
                x: r.values.to_vec(),
                label: r.label,
            });
        }
    }
    let data = Dataset::new(FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), rows);
    Ok(if cfg.ablate_mut_op { data.without("mutOp") } else { data })
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub feature_importance: Vec<(String, f64)>,
    pub model: ForestModel,
}

fn forest_config(cfg: &RunConfig) -> ForestConfig {
    ForestConfig {
        seed: cfg.seed,
        ..ForestConfig::default()
    }
}

/// Write `model.json` and `cv.json`.
pub fn stage_train(cfg: &RunConfig) -> Result<(), PipelineError> {
    let data = dataset(cfg)?;
    let fc = forest_config(cfg);
    let model = train(&data, &fc)?;
    let cv = cross_validate(
        &data,
        &CvConfig {
            k: cfg.k_folds,
            repeats: cfg.repeats,
            seed: cfg.seed,
            strategy: cfg.fold_strategy,
        },
        &fc,
    )?;
    let artifact = ModelArtifact {
        feature_importance: model.feature_importance(),
        model,
    };
    write_json(&cfg.out.join("model.json"), &artifact, Stage::Train)?;
    write_json(&cfg.out.join("cv.json"), &cv, Stage::Train)
}

/// Write `report.md` and `report.csv`.
pub fn stage_report(cfg: &RunConfig) -> Result<(), PipelineError> {
    let cv = read_json(&cfg.out.join("cv.json"), Stage::Report)?;
    let model: ModelArtifact = read_json(&cfg.out.join("model.json"), Stage::Report)?;
    let rows = build_report(
        &cv,
        |g| g.rsplit_once('@').map_or(g, |(b, _)| b).to_string(),
        cfg.seed,
        cfg.baseline_trials,
    );
    write_text(&cfg.out.join("report.csv"), &report_csv(&rows), Stage::Report)?;
    write_text(
        &cfg.out.join("report.md"),
        &report_md(&rows, &model.feature_importance),
        Stage::Report,
    )
}

/// Every stage over every bundle.
pub fn run_all(cfg: &RunConfig) -> Result<(), PipelineError> {
    for b in &cfg.bundles {
        stage_mutate(cfg, b)?;
        stage_propagate(cfg, b)?;
        stage_features(cfg, b)?;
    }
    stage_train(cfg)?;
    stage_report(cfg)
}

/// Run `f` on a pool capped at `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}
