//! Run reports and the files written to the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::stats::MeanStderr;
use crate::dataset::{write_weak_labels, SoftLabel};
use crate::error::{Error, Result};
use crate::pik::{histogram, HISTOGRAM_BINS};
use crate::selective::{save_metrics_log, StepMetrics};
use crate::smooth::{save_smooth_trace, SmoothTraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: Method,
    pub accuracy: f64,
}

/// Test accuracies of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub base_acc: f64,
    pub weak_acc: f64,
    pub ceiling_acc: f64,
    /// Hard accuracy of the weak labels on the strong half.
    pub weak_label_accuracy: f64,
    pub methods: Vec<MethodAccuracy>,
}

impl SeedRecord {
    pub fn accuracy(&self, method: Method) -> Option<f64> {
        self.methods.iter().find(|m| m.method == method).map(|m| m.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub accuracy: MeanStderr,
    /// PGR of the mean accuracies; `None` when the gap is zero.
    pub pgr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocRow {
    pub train_task: String,
    pub eval_task: String,
    /// Mean AUROC over seeds where it is defined.
    pub auroc: Option<f64>,
    pub seeds: usize,
}

/// P(IK) score histogram (20 equal bins on [0,1]) for one evaluation
/// task, split by true IK/IDK membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub eval_task: String,
    pub model: String,
    pub group: String,
    pub counts: Vec<u64>,
}

impl HistogramRow {
    pub fn split(eval_task: &str, model: &str, scores: &[f64], ik: &[u8]) -> Vec<HistogramRow> {
        [("ik", 1u8), ("idk", 0u8)]
            .into_iter()
            .map(|(group, label)| {
                let picked: Vec<f64> = scores.iter().zip(ik).filter(|(_, &l)| l == label).map(|(s, _)| *s).collect();
                HistogramRow {
                    eval_task: eval_task.to_string(),
                    model: model.to_string(),
                    group: group.to_string(),
                    counts: histogram(&picked).to_vec(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scalar: String,
    pub config: ExperimentConfig,
    pub weak: MeanStderr,
    pub ceiling: MeanStderr,
    pub base: MeanStderr,
    /// Set when PGR is undefined or numerically unstable.
    pub gap_flag: Option<String>,
    pub methods: Vec<MethodSummary>,
    pub seeds: Vec<SeedRecord>,
    pub failures: Vec<SeedFailure>,
    pub auroc_table: Vec<AurocRow>,
    pub pik_histograms: Vec<HistogramRow>,
}

impl RunReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Per-seed accuracies of a method, in seed order.
    pub fn per_seed(&self, method: Method) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.accuracy(method)).collect()
    }

    /// Human-readable method table.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>10} {:>9} {:>8}\n",
            "method", "accuracy", "stderr", "pgr"
        );
        let row = |name: &str, m: &MeanStderr, pgr: Option<f64>| {
            let pgr = pgr.map_or_else(|| "n/a".to_string(), |p| format!("{:.3}", p + 0.0));
            format!("{name:<18} {:>10.4} {:>9.4} {pgr:>8}\n", m.mean, m.stderr)
        };
        out.push_str(&row("weak", &self.weak, Some(0.0)));
        for m in &self.methods {
            out.push_str(&row(m.method.as_str(), &m.accuracy, m.pgr));
        }
        out.push_str(&row("ceiling", &self.ceiling, Some(1.0)));
        if let Some(flag) = &self.gap_flag {
            out.push_str(&format!("note: PGR {flag}\n"));
        }
        for f in &self.failures {
            out.push_str(&format!("seed {} failed: {}\n", f.seed, f.error));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocReport {
    pub scalar: String,
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    /// Row-major: train task outer, eval task inner.
    pub rows: Vec<AurocRow>,
    pub histograms: Vec<HistogramRow>,
}

impl AurocReport {
    pub fn cell(&self, train: &str, eval: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.train_task == train && r.eval_task == eval)
            .and_then(|r| r.auroc)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<16}", "train \\ eval");
        for t in &self.tasks {
            out.push_str(&format!(" {t:>12}"));
        }
        out.push('\n');
        for a in &self.tasks {
            out.push_str(&format!("{a:<16}"));
            for b in &self.tasks {
                let cell = self.cell(a, b).map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"));
                out.push_str(&format!(" {cell:>12}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Side outputs of a run: metrics logs, smoothing dumps and weak labels.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub metrics: Vec<(u64, Method, Vec<StepMetrics>)>,
    pub traces: Vec<(u64, Method, Vec<SmoothTraceRow>)>,
    pub weak_labels: Vec<(u64, BTreeMap<String, f64>)>,
}

/// Files produced by [`emit_report`].
pub struct ReportFile;

impl ReportFile {
    pub const JSON: &'static str = "report.json";
    pub const METHODS: &'static str = "methods.csv";
    pub const PER_SEED: &'static str = "per_seed.csv";
    pub const AUROC: &'static str = "auroc.csv";
    pub const HISTOGRAMS: &'static str = "pik_histograms.csv";
    pub const AUROC_JSON: &'static str = "auroc_matrix.json";
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_auroc_csv(rows: &[AurocRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["train_task", "eval_task", "auroc", "seeds"])?;
    for r in rows {
        w.write_record([
            r.train_task.clone(),
            r.eval_task.clone(),
            r.auroc.map_or_else(|| "N/A".to_string(), |v| v.to_string()),
            r.seeds.to_string(),
        ])?;
    }
    finish(w, path)
}

fn write_histograms_csv(rows: &[HistogramRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["eval_task".to_string(), "model".into(), "group".into()];
    header.extend((0..HISTOGRAM_BINS).map(|b| format!("bin{b:02}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.eval_task.clone(), r.model.clone(), r.group.clone()];
        rec.extend(r.counts.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Writes `report.json`, `methods.csv`, `per_seed.csv`, `auroc.csv` and
/// `pik_histograms.csv` into `dir`.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let json = dir.join(ReportFile::JSON);
    let text = serde_json::to_string_pretty(report)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;

    let methods = dir.join(ReportFile::METHODS);
    let mut w = csv_writer(&methods)?;
    w.write_record(["method", "accuracy_mean", "accuracy_stderr", "n", "pgr"])?;
    let mut push = |name: &str, m: &MeanStderr, pgr: Option<f64>| {
        w.write_record([
            name.to_string(),
            m.mean.to_string(),
            m.stderr.to_string(),
            m.n.to_string(),
            opt(pgr),
        ])
    };
    let defined = report.gap_flag.is_none() || report.ceiling.mean != report.weak.mean;
    push("weak", &report.weak, defined.then_some(0.0))?;
    for m in &report.methods {
        push(m.method.as_str(), &m.accuracy, m.pgr)?;
    }
    push("ceiling", &report.ceiling, defined.then_some(1.0))?;
    finish(w, &methods)?;

    let per_seed = dir.join(ReportFile::PER_SEED);
    let mut w = csv_writer(&per_seed)?;
    w.write_record(["seed", "method", "accuracy"])?;
    for s in &report.seeds {
        let seed = s.seed.to_string();
        w.write_record([seed.as_str(), "base", &s.base_acc.to_string()])?;
        w.write_record([seed.as_str(), "weak", &s.weak_acc.to_string()])?;
        for m in &s.methods {
            w.write_record([seed.as_str(), m.method.as_str(), &m.accuracy.to_string()])?;
        }
        w.write_record([seed.as_str(), "ceiling", &s.ceiling_acc.to_string()])?;
    }
    finish(w, &per_seed)?;

    let auroc = dir.join(ReportFile::AUROC);
    write_auroc_csv(&report.auroc_table, &auroc)?;
    let hist = dir.join(ReportFile::HISTOGRAMS);
    write_histograms_csv(&report.pik_histograms, &hist)?;
    Ok(vec![json, methods, per_seed, auroc, hist])
}

/// Writes `auroc_matrix.json`, `auroc.csv` and `pik_histograms.csv`.
pub fn emit_auroc_report(report: &AurocReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let json = dir.join(ReportFile::AUROC_JSON);
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join(ReportFile::AUROC);
    write_auroc_csv(&report.rows, &csv)?;
    let hist = dir.join(ReportFile::HISTOGRAMS);
    write_histograms_csv(&report.histograms, &hist)?;
    Ok(vec![json, csv, hist])
}

/// Writes per-step metrics logs, smoothing dumps and weak-label sidecars
/// under `dir/artifacts`.
pub fn emit_artifacts(artifacts: &RunArtifacts, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref().join("artifacts");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for (seed, method, log) in &artifacts.metrics {
        let path = dir.join(format!("metrics-seed{seed}-{}.jsonl", method.as_str()));
        save_metrics_log(log, &path)?;
        written.push(path);
    }
    for (seed, method, rows) in &artifacts.traces {
        let path = dir.join(format!("smoothing-seed{seed}-{}.csv", method.as_str()));
        save_smooth_trace(rows, &path)?;
        written.push(path);
    }
    for (seed, labels) in &artifacts.weak_labels {
        let path = dir.join(format!("weak-labels-seed{seed}.jsonl"));
        let labels = labels
            .iter()
            .map(|(id, &p1)| Ok((id.clone(), SoftLabel::new(p1)?)))
            .collect::<Result<BTreeMap<String, SoftLabel<f64>>>>()?;
        write_weak_labels(&labels, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
