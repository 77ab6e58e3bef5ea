//! Golden-file tests: the analyze command over the checked-in trace must
//! reproduce, byte for byte, the report that the brute-force oracle
//! produced for that trace.

mod support;

use std::path::{Path, PathBuf};

use darwin::SearchTrace;
use darwin_cli::commands::{cmd_analyze, AnalyzeArgs};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_report_bytes(trace: &SearchTrace) -> Vec<u8> {
    let config = &trace.header.config;
    let report = support::bf_report(
        std::slice::from_ref(trace),
        config.top_k,
        config.rbo_persistence,
        config.smoothing_window,
    );
    let mut json = serde_json::to_string_pretty(&report).unwrap();
    json.push('\n');
    json.into_bytes()
}

#[test]
fn analyze_reproduces_the_oracle_report_byte_for_byte() {
    let trace_path = golden_dir().join("golden.trace.jsonl");
    let golden_path = golden_dir().join("golden_report.json");
    let out_dir = tempfile::tempdir().unwrap();
    let out = out_dir.path().join("report.json");
    cmd_analyze(&AnalyzeArgs {
        traces: trace_path.to_string_lossy().into_owned(),
        metrics: vec![],
        k: None,
        p: None,
        window: None,
        out: out.clone(),
        csv_dir: None,
    })
    .unwrap();
    let produced = std::fs::read(&out).unwrap();
    let golden = std::fs::read(&golden_path).unwrap();
    assert_eq!(
        produced, golden,
        "analyze output diverged from the oracle-produced golden report"
    );

    // and the golden file itself still matches a fresh oracle pass
    let trace = SearchTrace::read_file(&trace_path).unwrap();
    assert_eq!(golden_report_bytes(&trace), golden);
}

#[test]
fn analyze_with_window_one_reports_unsmoothed_values() {
    let trace_path = golden_dir().join("golden.trace.jsonl");
    let trace = SearchTrace::read_file(&trace_path).unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = out_dir.path().join("report.json");
    cmd_analyze(&AnalyzeArgs {
        traces: trace_path.to_string_lossy().into_owned(),
        metrics: vec!["jaccard".into()],
        k: None,
        p: None,
        window: Some(1),
        out: out.clone(),
        csv_dir: None,
    })
    .unwrap();
    let report: darwin::analysis::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let raw = support::bf_avg_jaccard_series(
        std::slice::from_ref(&trace),
        trace.header.config.top_k,
        1,
    );
    assert_eq!(report.series[0], raw);
}

/// Regenerates tests/golden/golden_report.json from the oracle. Run after
/// intentionally re-recording the golden trace:
/// `cargo test -p darwin-cli --test golden -- --ignored regenerate`
#[test]
#[ignore]
fn regenerate_golden_report() {
    let trace = SearchTrace::read_file(golden_dir().join("golden.trace.jsonl")).unwrap();
    std::fs::write(
        golden_dir().join("golden_report.json"),
        golden_report_bytes(&trace),
    )
    .unwrap();
}
