//! History bundles: recorded linear project histories on disk.
//!
//! Layout:
//!
//! ```text
//! <bundle>/
//!   bundle.json          {"name", "injection_index", "revisions": [{"id", "timestamp", "author", "dir"}]}
//!   <dir>/src/*.ml       MiniLang sources of the revision
//!   <dir>/tests.json     the revision's test suite
//! ```
//!
//! Loading validates everything eagerly: timestamps never decrease, every
//! file parses, every test names an entry function that exists in exactly
//! one file with the right arity, and the suite is green at the injection
//! revision.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::minilang::{Program, SourceFile};
use crate::runner::{Baseline, TestCase, DEFAULT_STEP_BUDGET};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Exact number of days, as a reduced fraction.
pub type Days = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub injection_index: usize,
    pub revisions: Vec<ManifestRevision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRevision {
    pub id: String,
    pub timestamp: i64,
    pub author: String,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Revision {
    pub index: usize,
    pub id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub author: String,
    pub files: BTreeMap<String, SourceFile>,
    pub programs: BTreeMap<String, Program>,
    pub tests: Vec<TestCase>,
}

impl Revision {
    pub fn program(&self, path: &str) -> Option<&Program> {
        self.programs.get(path)
    }

    pub fn text(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(|f| f.text.as_str())
    }

    /// The test cases whose entry function lives in `path`.
    pub fn tests_for(&self, path: &str) -> Vec<TestCase> {
        match self.programs.get(path) {
            Some(p) => self.tests.iter().filter(|t| p.function(&t.entry).is_some()).cloned().collect(),
            None => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryBundle {
    pub name: String,
    pub revisions: Vec<Revision>,
    pub injection_index: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("no bundle.json in {0}")]
    MissingManifest(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("bundle has no revisions")]
    EmptyHistory,
    #[error("injection index {index} is outside the {len} revisions")]
    InjectionOutOfRange { index: usize, len: usize },
    #[error("timestamp of revision {index} is earlier than its predecessor")]
    NonMonotonicTimestamps { index: usize },
    #[error("revision {revision}: {path}:{line}:{column}: {message}")]
    ParseFailure {
        revision: String,
        path: String,
        line: u32,
        column: u32,
        message: String,
    },
    #[error("revision {revision}: test `{test}` is invalid: {reason}")]
    InvalidTest { revision: String, test: String, reason: String },
    #[error("revision {revision}: suite is not green on the original program (failing: {})", .tests.join(", "))]
    BrokenSuite { revision: String, tests: Vec<String> },
    #[error("git: {0}")]
    Git(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("revision {0} comes after revision {1}")]
pub struct IndexOrder(pub usize, pub usize);

/// Raw revision contents before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionInput {
    pub id: String,
    pub timestamp: i64,
    pub author: String,
    pub files: BTreeMap<String, String>,
    pub tests: Vec<TestCase>,
}

impl HistoryBundle {
    /// Validate in-memory revisions into a bundle.
    pub fn from_inputs(
        name: impl Into<String>,
        injection_index: usize,
        inputs: Vec<RevisionInput>,
        step_budget: u64,
    ) -> Result<Self, BundleError> {
        if inputs.is_empty() {
            return Err(BundleError::EmptyHistory);
        }
        if injection_index >= inputs.len() {
            return Err(BundleError::InjectionOutOfRange {
                index: injection_index,
                len: inputs.len(),
            });
        }
        if let Some(w) = inputs.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(BundleError::NonMonotonicTimestamps { index: w + 1 });
        }
        let mut revisions = Vec::with_capacity(inputs.len());
        for (index, input) in inputs.into_iter().enumerate() {
            let mut files = BTreeMap::new();
            let mut programs = BTreeMap::new();
            for (path, text) in input.files {
                let program = crate::minilang::parse(&text).map_err(|e| BundleError::ParseFailure {
                    revision: input.id.clone(),
                    path: path.clone(),
                    line: e.line,
                    column: e.column,
                    message: e.to_string(),
                })?;
                programs.insert(path.clone(), program);
                files.insert(path.clone(), SourceFile::new(path, text));
            }
            let rev = Revision {
                index,
                id: input.id,
                timestamp: input.timestamp,
                author: input.author,
                files,
                programs,
                tests: input.tests,
            };
            check_tests(&rev)?;
            revisions.push(rev);
        }
        let injection = &revisions[injection_index];
        let mut failing = Vec::new();
        for program in injection.programs.values() {
            failing.extend(Baseline::run(program, &injection.tests, step_budget).failing());
        }
        if !failing.is_empty() {
            failing.sort();
            return Err(BundleError::BrokenSuite {
                revision: injection.id.clone(),
                tests: failing,
            });
        }
        Ok(HistoryBundle {
            name: name.into(),
            revisions,
            injection_index,
        })
    }

    pub fn injection(&self) -> &Revision {
        &self.revisions[self.injection_index]
    }

    pub fn len(&self) -> usize {
        self.revisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.revisions.is_empty()
    }

    /// Exact elapsed time between revisions `i` and `j` in days.
    pub fn elapsed_days(&self, i: usize, j: usize) -> Result<Days, IndexOrder> {
        if i > j {
            return Err(IndexOrder(i, j));
        }
        let secs = self.revisions[j].timestamp - self.revisions[i].timestamp;
        Ok(Ratio::new(secs, SECONDS_PER_DAY))
    }

    /// Whether revision `r`'s test suite differs from revision `r - 1`'s.
    pub fn suite_changed(&self, r: usize) -> bool {
        r > 0 && self.revisions[r].tests != self.revisions[r - 1].tests
    }

    /// Write the bundle in on-disk layout, one `r<index>` directory per
    /// revision.
    pub fn write_to(&self, dir: &Path) -> Result<(), BundleError> {
        let manifest = Manifest {
            name: self.name.clone(),
            injection_index: self.injection_index,
            revisions: self
                .revisions
                .iter()
                .map(|r| ManifestRevision {
                    id: r.id.clone(),
                    timestamp: r.timestamp,
                    author: r.author.clone(),
                    dir: format!("r{}", r.index),
                })
                .collect(),
        };
        let inputs: Vec<RevisionInput> = self
            .revisions
            .iter()
            .map(|r| RevisionInput {
                id: r.id.clone(),
                timestamp: r.timestamp,
                author: r.author.clone(),
                files: r.files.iter().map(|(k, v)| (k.clone(), v.text.clone())).collect(),
                tests: r.tests.clone(),
            })
            .collect();
        write_layout(dir, &manifest, &inputs)
    }
}

fn check_tests(rev: &Revision) -> Result<(), BundleError> {
    for t in &rev.tests {
        let invalid = |reason: String| BundleError::InvalidTest {
            revision: rev.id.clone(),
            test: t.name.clone(),
            reason,
        };
        let owners: Vec<&Program> = rev.programs.values().filter(|p| p.function(&t.entry).is_some()).collect();
        match owners.as_slice() {
            [] => return Err(invalid(format!("entry `{}` is not declared", t.entry))),
            [p] => {
                let f = p.function(&t.entry).expect("owner declares entry");
                let arity = p.params(f.id).count();
                if arity != t.args.len() {
                    return Err(invalid(format!(
                        "entry `{}` takes {arity} argument(s), test passes {}",
                        t.entry,
                        t.args.len()
                    )));
                }
            }
            _ => return Err(invalid(format!("entry `{}` is declared in several files", t.entry))),
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load and validate the bundle stored in `dir`.
pub fn load_bundle(dir: &Path) -> Result<HistoryBundle, BundleError> {
    load_bundle_with(dir, DEFAULT_STEP_BUDGET)
}

/// Read only the manifest of the bundle in `dir`.
pub fn read_manifest(dir: &Path) -> Result<Manifest, BundleError> {
    let manifest_path = dir.join("bundle.json");
    if !manifest_path.is_file() {
        return Err(BundleError::MissingManifest(dir.to_path_buf()));
    }
    read_json(&manifest_path)
}

pub fn load_bundle_with(dir: &Path, step_budget: u64) -> Result<HistoryBundle, BundleError> {
    let manifest = read_manifest(dir)?;
    let mut inputs = Vec::with_capacity(manifest.revisions.len());
    for r in &manifest.revisions {
        let rdir = dir.join(&r.dir);
        let src = rdir.join("src");
        let mut files = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&src)
            .map_err(io_err(&src))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ml") && p.is_file())
            .collect();
        entries.sort();
        for path in entries {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            files.insert(name, text);
        }
        let tests: Vec<TestCase> = read_json(&rdir.join("tests.json"))?;
        inputs.push(RevisionInput {
            id: r.id.clone(),
            timestamp: r.timestamp,
            author: r.author.clone(),
            files,
            tests,
        });
    }
    HistoryBundle::from_inputs(manifest.name, manifest.injection_index, inputs, step_budget)
}

fn write_layout(dir: &Path, manifest: &Manifest, inputs: &[RevisionInput]) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (m, input) in manifest.revisions.iter().zip(inputs) {
        let src = dir.join(&m.dir).join("src");
        fs::create_dir_all(&src).map_err(io_err(&src))?;
        for (name, text) in &input.files {
            let p = src.join(name);
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        let tp = dir.join(&m.dir).join("tests.json");
        let json = serde_json::to_string_pretty(&input.tests).expect("tests serialize");
        fs::write(&tp, json + "\n").map_err(io_err(&tp))?;
    }
    let mp = dir.join("bundle.json");
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&mp, json + "\n").map_err(io_err(&mp))
}

/// Options for [`git_export`].
#[derive(Debug, Clone)]
pub struct GitExport {
    pub name: String,
    pub injection_index: usize,
    /// Revision range passed to `git rev-list` (default `HEAD`).
    pub range: String,
    /// Directory inside the repository holding the `.ml` sources.
    pub src_dir: String,
    /// Path of the test suite file inside the repository.
    pub tests_file: String,
}

impl GitExport {
    pub fn new(name: impl Into<String>) -> Self {
        GitExport {
            name: name.into(),
            injection_index: 0,
            range: "HEAD".into(),
            src_dir: "src".into(),
            tests_file: "tests.json".into(),
        }
    }
}

fn git(repo: &Path, args: &[&str]) -> Result<String, BundleError> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| BundleError::Git(e.to_string()))?;
    if !out.status.success() {
        return Err(BundleError::Git(format!(
            "git {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    String::from_utf8(out.stdout).map_err(|e| BundleError::Git(e.to_string()))
}

/// Walk the first-parent history of a git repository and write it out as a
/// bundle in `out`. Returns the validated bundle.
pub fn git_export(repo: &Path, out: &Path, opts: &GitExport) -> Result<HistoryBundle, BundleError> {
    let commits = git(repo, &["rev-list", "--reverse", "--first-parent", &opts.range])?;
    let mut manifest = Manifest {
        name: opts.name.clone(),
        injection_index: opts.injection_index,
        revisions: vec![],
    };
    let mut inputs = Vec::new();
    for (i, commit) in commits.lines().filter(|l| !l.is_empty()).enumerate() {
        let meta = git(repo, &["show", "-s", "--format=%ct%x00%an", commit])?;
        let (ts, author) = meta
            .trim_end()
            .split_once('\0')
            .ok_or_else(|| BundleError::Git(format!("bad metadata for {commit}")))?;
        let timestamp: i64 = ts.parse().map_err(|_| BundleError::Git(format!("bad timestamp for {commit}")))?;
        let listing = git(repo, &["ls-tree", "-r", "--name-only", commit, "--", &opts.src_dir])?;
        let mut files = BTreeMap::new();
        for path in listing.lines().filter(|p| p.ends_with(".ml")) {
            let rel = path.strip_prefix(&format!("{}/", opts.src_dir)).unwrap_or(path);
            if rel.contains('/') {
                continue;
            }
            let text = git(repo, &["show", &format!("{commit}:{path}")])?;
            files.insert(rel.to_string(), text);
        }
        let has_tests = !git(repo, &["ls-tree", "--name-only", commit, "--", &opts.tests_file])?
            .trim()
            .is_empty();
        let tests: Vec<TestCase> = if has_tests {
            let text = git(repo, &["show", &format!("{commit}:{}", opts.tests_file)])?;
            serde_json::from_str(&text).map_err(|e| BundleError::Json {
                path: PathBuf::from(format!("{commit}:{}", opts.tests_file)),
                message: e.to_string(),
            })?
        } else {
            vec![]
        };
        manifest.revisions.push(ManifestRevision {
            id: commit.to_string(),
            timestamp,
            author: author.to_string(),
            dir: format!("r{i}"),
        });
        inputs.push(RevisionInput {
            id: commit.to_string(),
            timestamp,
            author: author.to_string(),
            files,
            tests,
        });
    }
    write_layout(out, &manifest, &inputs)?;
    load_bundle(out)
}
