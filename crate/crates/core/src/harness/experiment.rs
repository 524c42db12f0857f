use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use super::config::RunConfig;
use super::train::{RunState, TaskReport};
use crate::buffer::{coefficient_of_variation, BufferSnapshot};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::evaluate::{AccuracyMatrix, OodMatrices, StageEvaluator};
use crate::model::Model;

pub const SUMMARY_HEADER: &str = "policy,seed,ACC_iid,BWT_iid,ACC_ood,BWT_ood,CV_tasks,CV_classes";
const METRICS: [&str; 6] = ["ACC_iid", "BWT_iid", "ACC_ood", "BWT_ood", "CV_tasks", "CV_classes"];

/// Metrics of one seeded run. Absent values (BWT of a single task, OOD on a
/// vector stream, CV of an empty buffer) are `None` and written as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub seed: u64,
    pub acc_iid: f64,
    pub bwt_iid: Option<f64>,
    pub acc_ood: Option<f64>,
    pub bwt_ood: Option<f64>,
    pub cv_tasks: Option<f64>,
    pub cv_classes: Option<f64>,
}

impl SummaryRow {
    pub fn metrics(&self) -> [Option<f64>; 6] {
        [
            Some(self.acc_iid),
            self.bwt_iid,
            self.acc_ood,
            self.bwt_ood,
            self.cv_tasks,
            self.cv_classes,
        ]
    }

    fn csv_line(&self) -> String {
        let mut line = format!("{},{}", self.policy, self.seed);
        for m in self.metrics() {
            push_cell(&mut line, m);
        }
        line
    }
}

fn push_cell(line: &mut String, v: Option<f64>) {
    match v {
        Some(v) => {
            let _ = write!(line, ",{v:.6}");
        }
        None => line.push_str(",NA"),
    }
}

/// Everything one seeded run produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub row: SummaryRow,
    pub iid: AccuracyMatrix,
    pub ood: OodMatrices,
    pub reports: Vec<TaskReport>,
    pub model: Model<f64>,
}

impl SeedOutcome {
    /// Buffer snapshot after each task.
    pub fn snapshots(&self) -> Vec<&BufferSnapshot> {
        self.reports.iter().map(|r| &r.buffer).collect()
    }
}

/// Mean and population standard deviation of each metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

pub fn aggregate(rows: &[SummaryRow]) -> Vec<Aggregate> {
    METRICS
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.metrics()[k]).collect();
            if vals.is_empty() || vals.len() != rows.len() {
                return Aggregate { metric, mean: None, std: None };
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Aggregate {
                metric,
                mean: Some(mean),
                std: Some(var.sqrt()),
            }
        })
        .collect()
}

/// Trains one seed through the whole stream, evaluating after every task.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    config.validate()?;
    let stream = config.stream.build(seed)?;
    stream.validate()?;
    let tests: Vec<Vec<Sample>> = stream.tasks.iter().map(|t| t.test.clone()).collect();
    let specs: Vec<_> = if config.stream.is_image() {
        config.corruptions.iter().map(|s| crate::data::CorruptionSpec { seed: s.seed.wrapping_add(seed), ..*s }).collect()
    } else {
        if !config.corruptions.is_empty() {
            log::warn!("corruptions need an image stream; skipping OOD evaluation");
        }
        Vec::new()
    };
    let mut eval = StageEvaluator::new(&tests, stream.kind, &specs)?;
    let mut state = RunState::new(config, stream.kind, seed)?;
    let mut reports = Vec::with_capacity(stream.num_tasks());
    for task in &stream.tasks {
        let report = state.train_task(task)?;
        eval.evaluate(&state.model)?;
        log::info!(
            "seed {seed} task {}: loss {:.4}, acc {:.4}, buffer {}",
            task.id,
            report.final_loss,
            eval.iid().rows().last().map(|r| r.iter().sum::<f64>() / r.len() as f64).unwrap_or(0.0),
            report.buffer.len()
        );
        if report.skipped > 0 {
            log::warn!("task {}: skipped {} degenerate batches", task.id, report.skipped);
        }
        reports.push(report);
    }
    let (iid, ood) = eval.finish_all()?;
    let final_buffer = &reports.last().ok_or(Error::Undefined("run over an empty stream"))?.buffer;
    let (acc_ood, bwt_ood) = if ood.per_spec.is_empty() {
        (None, None)
    } else {
        (Some(ood.aggregate.acc()?), ood.aggregate.bwt())
    };
    let row = SummaryRow {
        policy: config.policy.to_string(),
        seed,
        acc_iid: iid.acc()?,
        bwt_iid: iid.bwt(),
        acc_ood,
        bwt_ood,
        cv_tasks: coefficient_of_variation(&final_buffer.task_counts()).ok(),
        cv_classes: coefficient_of_variation(&final_buffer.class_counts()).ok(),
    };
    Ok(SeedOutcome {
        row,
        iid,
        ood,
        reports,
        model: state.model,
    })
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-seed artifacts under `dir`.
pub fn write_seed_outputs(dir: &Path, outcome: &SeedOutcome, config: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    outcome.iid.write_csv(&dir.join("alpha_iid.csv"))?;
    for (spec, m) in &outcome.ood.per_spec {
        m.write_csv(&dir.join(format!("alpha_ood_{}_{}.csv", spec.kind, spec.severity)))?;
    }
    if !outcome.ood.per_spec.is_empty() {
        outcome.ood.aggregate.write_csv(&dir.join("alpha_ood_mean.csv"))?;
    }
    let stages: Vec<serde_json::Value> = outcome.reports.iter().map(|r| r.buffer.to_json()).collect();
    let buffer = serde_json::to_string_pretty(&stages).expect("snapshot serializes");
    write(&dir.join("buffer.json"), buffer)?;
    outcome.model.save(&dir.join("model.json"))?;
    if config.dump_confidence {
        for r in &outcome.reports {
            if let Some(ledger) = &r.ledger {
                let path = dir.join(format!("confidence_task{}.csv", r.task));
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                let class_of = |id| r.labels.get(&id).copied();
                ledger
                    .write_csv(std::io::BufWriter::new(file), class_of)
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    if let Some(first) = rows.first() {
        let mut line = format!("{},mean", first.policy);
        for a in aggregate(rows) {
            push_cell(&mut line, a.mean);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn aggregate_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("metric,mean,std\n");
    for a in aggregate(rows) {
        let mut line = a.metric.to_string();
        push_cell(&mut line, a.mean);
        push_cell(&mut line, a.std);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub aggregate: Vec<Aggregate>,
    pub out_dir: PathBuf,
}

/// Runs every configured seed and writes all outputs under `config.out_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let out = &config.out_dir;
    create_dir(out)?;
    write(&out.join("config.json"), config.to_json_pretty())?;
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let outcome = run_seed(config, seed)?;
        write_seed_outputs(&out.join(format!("seed_{seed}")), &outcome, config)?;
        log::info!("seed {seed}: ACC {:.4}", outcome.row.acc_iid);
        rows.push(outcome.row);
    }
    write(&out.join("summary.csv"), summary_csv(&rows))?;
    write(&out.join("aggregate.csv"), aggregate_csv(&rows))?;
    Ok(ExperimentSummary {
        aggregate: aggregate(&rows),
        rows,
        out_dir: out.clone(),
    })
}

/// Runs the experiment once per value of `param`, each under `out/<param>_<value>`,
/// and writes a combined `sweep.csv`.
pub fn run_sweep(config: &RunConfig, param: &str, values: &[String]) -> Result<Vec<(String, ExperimentSummary)>> {
    let mut results = Vec::with_capacity(values.len());
    let mut combined = format!("param,value,{SUMMARY_HEADER}\n");
    for v in values {
        let mut c = config.clone();
        c.set(param, v)?;
        c.out_dir = config.out_dir.join(format!("{}_{v}", param.replace('.', "_")));
        c.validate()?;
        let summary = run_experiment(&c)?;
        for r in &summary.rows {
            let _ = writeln!(combined, "{param},{v},{}", r.csv_line());
        }
        results.push((v.clone(), summary));
    }
    create_dir(&config.out_dir)?;
    write(&config.out_dir.join("sweep.csv"), combined)?;
    Ok(results)
}

/// `2..7` (inclusive) or `2,3,5`.
pub fn parse_values(spec: &str) -> Result<Vec<String>> {
    if let Some((a, b)) = spec.split_once("..") {
        let lo: i64 = a.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad range {spec:?}")))?;
        let hi: i64 = b.trim_start_matches('=').trim().parse().map_err(|_| Error::InvalidArgument(format!("bad range {spec:?}")))?;
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty range {spec:?}")));
        }
        return Ok((lo..=hi).map(|v| v.to_string()).collect());
    }
    let vals: Vec<String> = spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if vals.is_empty() {
        return Err(Error::InvalidArgument("no sweep values".into()));
    }
    Ok(vals)
}

/// Reads every `summary.csv` under `dir` and returns a table of per-seed means
/// and population standard deviations, one line per (run directory, policy).
pub fn report(dir: &Path) -> Result<String> {
    let mut groups: BTreeMap<(String, String), Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Format {
            path: dir.to_path_buf(),
            detail: e.to_string(),
        })?;
        if entry.file_name() != "summary.csv" {
            continue;
        }
        let path = entry.path();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let run = path
            .parent()
            .and_then(|p| p.strip_prefix(dir).ok())
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        let mut lines = text.lines();
        if lines.next() != Some(SUMMARY_HEADER) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "unexpected header".into(),
            });
        }
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: format!("expected 8 columns in {line:?}"),
                });
            }
            if cells[1] == "mean" {
                continue;
            }
            let vals = cells[2..].iter().map(|c| c.parse::<f64>().ok()).collect();
            groups.entry((run.clone(), cells[0].to_string())).or_default().push(vals);
        }
    }
    if groups.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            detail: "no summary.csv found".into(),
        });
    }
    let mut out = String::from("| run | policy | seeds |");
    for m in METRICS {
        let _ = write!(out, " {m} |");
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(METRICS.len()));
    out.push('\n');
    for ((run, policy), rows) in groups {
        let _ = write!(out, "| {run} | {policy} | {} |", rows.len());
        for k in 0..METRICS.len() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[k]).collect();
            if vals.len() != rows.len() {
                out.push_str(" NA |");
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let _ = write!(out, " {mean:.4} ± {std:.4} |");
        }
        out.push('\n');
    }
    Ok(out)
}
