#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attriq_core::query_gen::{Attribute, AttributeQuery, Vocabulary};
use attriq_testkit::synth::{self, Page};

pub const W: u32 = 64;
pub const H: u32 = 96;

/// A labeled synthetic corpus on disk with a vocabulary and query set.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub pages: Vec<Page>,
    pub manifest: PathBuf,
    pub vocabulary: PathBuf,
    pub queries: PathBuf,
    pub query_set: Vec<AttributeQuery>,
}

impl Fixture {
    pub fn new(docs: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = attriq_testkit::rng(seed);
        let pages = synth::labeled_corpus(&mut rng, docs, W, H);
        let manifest = synth::write_corpus(&dir.path().join("corpus"), &pages).unwrap();

        let vocab = Vocabulary::new([
            Attribute::new(synth::ILLUMINATED, "has an illuminated initial"),
            Attribute::new(synth::SEAL, "has a wax seal").with_negative("wax seal"),
            Attribute::new(synth::STAINED, "has stains and tears"),
        ])
        .unwrap();
        let vocabulary = dir.path().join("vocabulary.json");
        std::fs::write(&vocabulary, vocab.to_json()).unwrap();

        let query_set = vec![
            AttributeQuery::new("q1", [synth::ILLUMINATED], Vec::<String>::new()),
            AttributeQuery::new("q2", [synth::SEAL], Vec::<String>::new()),
            AttributeQuery::new("q3", [synth::STAINED], [synth::SEAL]),
        ];
        let queries = dir.path().join("queries.jsonl");
        let lines: String = query_set
            .iter()
            .map(|q| serde_json::to_string(q).unwrap() + "\n")
            .collect();
        std::fs::write(&queries, lines).unwrap();

        Self {
            dir,
            pages,
            manifest,
            vocabulary,
            queries,
            query_set,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Builds an index over the corpus with the `test` backend.
    pub fn build_index(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        success(&attriq(&[
            "index".as_ref(),
            "build".as_ref(),
            "--corpus".as_ref(),
            self.manifest.as_os_str(),
            "--backend".as_ref(),
            "test".as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ]));
        out
    }

    pub fn page_path(&self, doc_id: &str) -> PathBuf {
        self.dir.path().join("corpus/images").join(format!("{doc_id}.png"))
    }
}

pub fn attriq<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attriq"))
        .args(args)
        .env_remove("ATTRIQ_LOG")
        .output()
        .expect("binary runs")
}

/// Stdout of a successful run.
pub fn success(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// The `code=` field of the error line of a failed run.
pub fn error_code(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.starts_with("error: code="))
        .unwrap_or_else(|| panic!("no error line in {stderr}"));
    line["error: code=".len()..].split(' ').next().unwrap().to_owned()
}

pub fn arg(p: &Path) -> &OsStr {
    p.as_os_str()
}
