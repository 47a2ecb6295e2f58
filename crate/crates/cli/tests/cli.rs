mod common;

use std::collections::BTreeSet;
use std::ffi::OsStr;

use attriq_core::embedding::{embed, TestBackend};
use attriq_core::evaluation::EvaluationReport;
use attriq_core::index::load_index;
use attriq_core::similarity::{dissimilarity, Measure};
use attriq_testkit::rank::{hits_at, reference_order, relevant};
use attriq_testkit::stats;
use common::{arg, attriq, error_code, success, Fixture};

fn run(args: &[&OsStr]) -> std::process::Output {
    attriq(args)
}

macro_rules! args {
    ($($a:expr),* $(,)?) => { [$(AsRef::<OsStr>::as_ref(&$a)),*] };
}

#[test]
fn build_then_query_lists_k_lines() {
    let fx = Fixture::new(30, 1);
    let index = fx.build_index("idx.t2iq");
    let image = fx.page_path("doc0007");
    let out = success(&run(&args!["query", "--index", index, "--image", image, "--measure", "l2", "--k", "3"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "1\tdoc0007\t0");
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[0], (i + 1).to_string());
        fields[2].parse::<f64>().unwrap();
    }
}

#[test]
fn inspect_reports_descriptor() {
    let fx = Fixture::new(12, 2);
    let index = fx.build_index("idx.t2iq");
    let out = success(&run(&args!["index", "inspect", "--index", index]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["documents"], 12);
    assert_eq!(v["descriptor"]["backend_id"], "test");
    assert_eq!(v["descriptor"]["embedding_dim"], 64);
}

#[test]
fn query_output_is_deterministic() {
    let fx = Fixture::new(40, 3);
    let index = fx.build_index("idx.t2iq");
    let image = fx.page_path("doc0011");
    let cases: Vec<Vec<&OsStr>> = vec![
        args!["query", "--index", index, "--image", image, "--measure", "cosine", "--k", "10"].to_vec(),
        args![
            "query", "--index", index, "--vocabulary", fx.vocabulary, "--query-file", fx.queries, "--query-id", "q3",
            "--provider", "mock", "--seed", "9", "--width", "64", "--height", "96", "--num-candidates", "3",
            "--format", "json", "--timings",
        ]
        .to_vec(),
    ];
    for case in cases {
        let first = run(&case);
        let second = run(&case);
        assert_eq!(success(&first), success(&second));
        assert!(!first.stdout.is_empty());
    }
}

#[test]
fn generate_writes_n_deterministic_pngs() {
    let fx = Fixture::new(1, 4);
    let outputs: Vec<Vec<Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = fx.path(name);
            let listing = success(&run(&args![
                "generate", "--query-file", fx.queries, "--query-id", "q2", "--vocabulary", fx.vocabulary,
                "--provider", "mock", "--seed", "5", "--n", "4", "--out", dir,
            ]));
            let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            assert_eq!(files.len(), 4);
            assert_eq!(listing.lines().count(), 4);
            for (i, f) in files.iter().enumerate() {
                assert_eq!(f.file_name().unwrap().to_str().unwrap(), format!("q2-{i}.png"));
            }
            files.iter().map(|f| std::fs::read(f).unwrap()).collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    for img in &outputs[0] {
        assert_eq!(image::guess_format(img).unwrap(), image::ImageFormat::Png);
    }
    let distinct: BTreeSet<&Vec<u8>> = outputs[0].iter().collect();
    assert_eq!(distinct.len(), 4);
}

/// Per-query metrics recomputed by brute force from the saved query images.
fn brute_force(fx: &Fixture, index_path: &std::path::Path, images_dir: &std::path::Path, measure: Measure) -> Vec<[f64; 4]> {
    let index = load_index(index_path).unwrap();
    let backend = TestBackend::new();
    fx.query_set
        .iter()
        .map(|q| {
            let img = std::fs::read(images_dir.join(format!("{}-0.png", q.query_id))).unwrap();
            let v = embed(&img, &backend).unwrap();
            let scored: Vec<(String, f64)> = index
                .iter()
                .map(|(id, d)| (id.to_owned(), dissimilarity(measure, v.values(), d).unwrap()))
                .collect();
            let ranked = reference_order(&scored);
            let labels = |id: &str| fx.pages.iter().find(|p| p.doc_id == id).unwrap().attributes.clone();
            let is_rel = |id: &str| relevant(&labels(id), &q.positives, &q.negatives);
            let r = fx.pages.iter().filter(|p| is_rel(&p.doc_id)).count();
            let p = |k: usize| hits_at(&ranked, is_rel, k) as f64 / k as f64;
            [p(3), p(10), p(25), hits_at(&ranked, is_rel, r) as f64 / r as f64]
        })
        .collect()
}

#[test]
fn eval_report_matches_brute_force() {
    let fx = Fixture::new(60, 5);
    let idx_dir = fx.path("indexes");
    std::fs::create_dir(&idx_dir).unwrap();
    let index = {
        let built = fx.build_index("indexes/test.t2iq");
        std::fs::write(idx_dir.join("notes.txt"), "not an index").unwrap();
        built
    };
    let images = fx.path("query-images");
    success(&run(&args![
        "generate", "--query-file", fx.queries, "--vocabulary", fx.vocabulary, "--provider", "mock", "--seed", "3",
        "--width", "64", "--height", "96", "--out", images,
    ]));

    let json_report = fx.path("report.json");
    let md_report = fx.path("report.md");
    for report in [&json_report, &md_report] {
        success(&run(&args![
            "eval", "--index-dir", idx_dir, "--queries", fx.queries, "--truth", fx.manifest, "--query-images", images,
            "--report", report,
        ]));
    }

    let report: EvaluationReport = serde_json::from_slice(&std::fs::read(&json_report).unwrap()).unwrap();
    assert_eq!(report.per_query.len(), 9);
    assert_eq!(report.aggregates.len(), 3);
    assert!(report.failures.is_empty());

    let md = std::fs::read_to_string(&md_report).unwrap();
    let table: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(table[0], "| Architecture | Sim. Measure | Prec@3 | Prec@10 | Prec@25 | R-Prec |");
    assert_eq!(table.len(), 2 + 3);

    for (m_i, measure) in [Measure::L1, Measure::L2, Measure::Cosine].into_iter().enumerate() {
        let want = brute_force(&fx, &index, &images, measure);
        let rows: Vec<_> = report.per_query.iter().filter(|r| r.measure == measure).collect();
        assert_eq!(rows.len(), 3);
        for (row, w) in rows.iter().zip(&want) {
            assert_eq!([row.precision_at_3, row.precision_at_10, row.precision_at_25, row.r_precision], *w);
        }
        let cells: Vec<String> = (0..4)
            .map(|c| {
                let col: Vec<f64> = want.iter().map(|w| w[c]).collect();
                let (mean, std) = stats::mean_sample_std(&col);
                format!("{} ± {}", stats::round_half_up(mean, 3), stats::round_half_up(std, 3))
            })
            .collect();
        let line = format!("| Seeded projection | {} | {} |", measure.label(), cells.join(" | "));
        assert_eq!(table[2 + m_i], line, "{md}");
    }
}

#[test]
fn failures_print_one_error_line() {
    let fx = Fixture::new(5, 6);
    let index = fx.build_index("idx.t2iq");
    let image = fx.page_path("doc0000");

    let out = run(&args!["query", "--index", index, "--image", image, "--k", "6"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "KTooLarge");

    let missing = fx.path("missing.t2iq");
    assert_eq!(error_code(&run(&args!["query", "--index", missing, "--image", image])), "IoFailure");

    let junk = fx.path("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert_eq!(error_code(&run(&args!["query", "--index", index, "--image", junk])), "UndecodableImage");

    let out = run(&args!["query", "--index", index, "--positive", "seal", "--provider", "mock"]);
    assert_eq!(error_code(&out), "InvalidArgument");

    let out = run(&args!["query", "--index", index, "--measure", "hamming", "--image", image]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "InvalidArgument");

    let out = run(&args!["index", "build", "--corpus", fx.manifest, "--backend", "nonexistent", "--out", missing]);
    assert_eq!(error_code(&out), "BackendLoadFailure");
}

#[test]
fn config_file_supplies_defaults() {
    let fx = Fixture::new(20, 7);
    let index = fx.build_index("idx.t2iq");
    let config = fx.path("attriq.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 4\nindex = {:?}\nvocabulary = {:?}\n[generation]\nwidth = 64\nheight = 96\n",
            arg(&index),
            arg(&fx.vocabulary)
        ),
    )
    .unwrap();
    let with_config = success(&run(&args!["--config", config, "query", "--positive", "seal", "--k", "5"]));
    let explicit = success(&run(&args![
        "query", "--index", index, "--vocabulary", fx.vocabulary, "--positive", "seal", "--seed", "4", "--width",
        "64", "--height", "96", "--k", "5",
    ]));
    assert_eq!(with_config, explicit);
    assert_eq!(with_config.lines().count(), 5);

    std::fs::write(&config, "bogus_key = 1\n").unwrap();
    let out = run(&args!["--config", config, "index", "inspect", "--index", index]);
    assert_eq!(error_code(&out), "InvalidConfig");
}
