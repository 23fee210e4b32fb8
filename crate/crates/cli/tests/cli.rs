use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-depth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_then_depth_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sparse.csv");
    ok(&["generate", "--model", "1", "--n", "40", "--setting", "2", "--seed", "3", "--out", p(&data)]);
    let ids: std::collections::BTreeSet<String> = csv_rows(&data).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(ids.len(), 40);

    let depth = dir.path().join("depth.csv");
    ok(&[
        "depth", "--input", p(&data), "--method", "mbdu", "--auto-alpha", "--bootstrap", "5", "--out", p(&depth),
    ]);
    let rows = csv_rows(&depth);
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r[1] == "mbdu" || r[1] == "mbd"));

    let plain = dir.path().join("plain.csv");
    ok(&["depth", "--input", p(&data), "--method", "mbd", "--bootstrap", "5", "--out", p(&plain)]);
    let rows = csv_rows(&plain);
    assert!(rows.iter().all(|r| r[1] == "mbd" && r[2].is_empty()));

    let fit = dir.path().join("fit");
    ok(&[
        "fit", "--input", p(&data), "--bootstrap", "4", "--alpha", "0.05", "--alpha", "0.2", "--out", p(&fit),
    ]);
    assert!(fit.join("model.json").exists());
    let rec = csv_rows(&fit.join("reconstructions.csv"));
    assert!(!rec.is_empty() && rec.len().is_multiple_of(2));
}

#[test]
fn observed_depth_on_dense_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dense.csv");
    let truth = dir.path().join("truth.csv");
    ok(&["generate", "--model", "4", "--n", "15", "--out", p(&data), "--truth", p(&truth)]);
    assert!(truth.exists());
    let out = dir.path().join("depth.csv");
    ok(&["depth", "--input", p(&data), "--method", "mbd", "--observed", "--trapezoid", "--out", p(&out)]);
    let mut ranks: Vec<usize> = csv_rows(&out).iter().map(|r| r[4].parse().unwrap()).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=15).collect::<Vec<_>>());
}

#[test]
fn simulate_and_induce_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&[
        "--threads", "2", "simulate", "--model", "1", "--setting", "4", "--n", "30", "--replicates", "2",
        "--bootstrap", "3", "--no-plots", "--out", p(&sim),
    ]);
    for f in ["records.csv", "report.json", "scatter.csv"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    assert_eq!(csv_rows(&sim.join("records.csv")).len(), 2);

    let data = dir.path().join("dense.csv");
    ok(&["generate", "--model", "1", "--n", "30", "--out", p(&data)]);
    let ind = dir.path().join("induce");
    ok(&[
        "induce", "--input", p(&data), "--protocol", "j2", "--replicates", "2", "--bootstrap", "3", "--out", p(&ind),
    ]);
    assert_eq!(csv_rows(&ind.join("records.csv")).len(), 2);
    assert!(ind.join("scatter_j2.svg").exists());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run(&["depth", "--input", p(&missing), "--method", "mbd", "--out", p(&dir.path().join("o.csv"))]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = run(&["generate", "--model", "7", "--out", p(&dir.path().join("g.csv"))]);
    assert!(!out.status.success());
}
