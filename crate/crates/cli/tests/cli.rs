use std::path::Path;
use std::process::{Command, Output};

fn w2s(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_w2s"));
    cmd.args(args).env_remove("W2S_OUTPUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("W2S_OUTPUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Commented default config shrunk to a quick two-seed run.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let o = w2s(&["config"], None);
    assert!(o.status.success());
    let text = stdout(&o)
        .replace("samples_per_family = 4000", "samples_per_family = 600")
        .replace(&format!("seeds = [{}]", (0..20).map(|s| s.to_string()).collect::<Vec<_>>().join(", ")), "seeds = [0, 1]");
    assert!(text.contains("seeds = [0, 1]"));
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pgr_calculator() {
    let o = w2s(&["pgr", "64.70", "77.90", "93.40"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("45.99%"));
    let o = w2s(&["pgr", "64.91", "62.22", "89.91"], None);
    assert!(stdout(&o).contains("-10.76%"));
    assert!(!w2s(&["pgr", "0.7", "0.8", "0.7"], None).status.success());
}

#[test]
fn default_config_is_commented() {
    let o = w2s(&["config"], None);
    assert!(stdout(&o).starts_with('#'));
    assert!(stdout(&o).contains("gamma = 0.8"));
}

#[test]
fn gen_data_writes_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("corpus.jsonl");
    let o = w2s(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, 3 * 600);
}

#[test]
fn run_honours_the_output_directory_variable_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("from-env");
    let o = w2s(&["run", "--config", cfg.to_str().unwrap(), "--methods", "finetune,selective", "--artifacts"], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "methods.csv", "per_seed.csv", "auroc.csv", "pik_histograms.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(out.join("artifacts/metrics-seed0-selective.jsonl").exists());
    let r = w2s(&["report", out.join("report.json").to_str().unwrap()], None);
    assert!(r.status.success());
    assert!(stdout(&r).contains("selective"));
}

#[test]
fn failed_stages_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let text = std::fs::read_to_string(&cfg).unwrap();
    let start = text.find("[corpus]").unwrap();
    let end = text[start..].find("\n\n").unwrap() + start;
    let broken = format!("{}[corpus]\nkind = \"file\"\npath = \"/nonexistent/corpus.jsonl\"{}", &text[..start], &text[end..]);
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, broken).unwrap();
    let o = w2s(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds failed"));

    std::fs::write(&path, "not = [valid").unwrap();
    assert!(!w2s(&["run", "--config", path.to_str().unwrap()], None).status.success());
}

#[test]
fn auroc_matrix_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("auroc");
    let o = w2s(
        &["auroc-matrix", "--config", cfg.to_str().unwrap(), "--tasks", "family0,family1", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("auroc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
