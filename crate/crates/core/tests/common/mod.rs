//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use latent_core::histstore::{load_bundle, HistoryBundle, RevisionInput};
use rand::Rng;

pub const BUNDLES: [&str; 4] = ["account", "inventory", "geometry", "scheduler"];

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn bundle(name: &str) -> HistoryBundle {
    load_bundle(&corpus_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every distinct (name, text) source file of the corpus.
pub fn corpus_files() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for b in BUNDLES {
        for r in bundle(b).revisions {
            for (path, f) in r.files {
                if !out.iter().any(|(_, t)| *t == f.text) {
                    out.push((format!("{b}/{}/{path}", r.id), f.text));
                }
            }
        }
    }
    out
}

pub fn inputs(b: &HistoryBundle) -> Vec<RevisionInput> {
    b.revisions
        .iter()
        .map(|r| RevisionInput {
            id: r.id.clone(),
            timestamp: r.timestamp,
            author: r.author.clone(),
            files: r.files.iter().map(|(k, f)| (k.clone(), f.text.clone())).collect(),
            tests: r.tests.clone(),
        })
        .collect()
}

const FILLERS: [&str; 7] = [" ", "  ", "\n", "\n\n  ", " /* note */ ", " // note\n", "\t"];

/// Insert whitespace and comments between tokens of `text`.
pub fn restyle(text: &str, rng: &mut impl Rng) -> String {
    let toks = latent_core::minilang::lexer::tokenize(text).expect("lexes");
    let mut out = String::new();
    let mut pos = 0;
    for t in &toks {
        out.push_str(&text[pos..t.start]);
        if rng.gen_bool(0.3) {
            out.push_str(FILLERS[rng.gen_range(0..FILLERS.len())]);
        }
        out.push_str(&text[t.start..t.end]);
        pos = t.end;
    }
    out.push_str(&text[pos..]);
    if rng.gen_bool(0.5) {
        out.insert_str(0, "// restyled\n");
    }
    out
}
