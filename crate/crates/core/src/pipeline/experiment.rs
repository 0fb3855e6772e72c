//! The full evaluation methodology: for each run seed, train NN, RL and CL,
//! evaluate all three on clean and distorted test sets, and aggregate
//! mean +- std across runs.

use rayon::prelude::*;

use crate::data::distort;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::{TransformChain, TransformSet};

use super::classifier::{evaluate, train_cl, train_nn, EvalPolicy, Model};
use super::rl::{preprocess_dataset, trace_episodes, train_rl};
use super::trace::EpisodeTrace;
use super::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nn,
    Rl,
    Cl,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Nn, ModelKind::Rl, ModelKind::Cl];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nn => "NN",
            ModelKind::Rl => "RL",
            ModelKind::Cl => "CL",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "NN" => Ok(ModelKind::Nn),
            "RL" => Ok(ModelKind::Rl),
            "CL" => Ok(ModelKind::Cl),
            _ => Err(Error::InvalidArgument(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Clean,
    Distorted,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Clean, Condition::Distorted];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Distorted => "distorted",
        }
    }

    pub fn parse(s: &str) -> Result<Condition> {
        match s {
            "clean" => Ok(Condition::Clean),
            "distorted" => Ok(Condition::Distorted),
            _ => Err(Error::InvalidArgument(format!("unknown condition {s:?}"))),
        }
    }
}

/// Accuracy of one (model, condition) cell in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub model: ModelKind,
    pub condition: Condition,
    pub accuracy: f64,
}

impl RunRecord {
    pub fn render_line(&self) -> String {
        format!(
            "run={} model={} condition={} accuracy={}",
            self.run,
            self.model.name(),
            self.condition.name(),
            self.accuracy
        )
    }

    pub fn parse_line(line: &str) -> Result<RunRecord> {
        let mut run = None;
        let mut model = None;
        let mut condition = None;
        let mut accuracy = None;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("run record field {field:?} is not key=value"))
            })?;
            match key {
                "run" => {
                    run = Some(value.parse::<usize>().map_err(|_| {
                        Error::InvalidArgument(format!("bad run index {value:?}"))
                    })?)
                }
                "model" => model = Some(ModelKind::parse(value)?),
                "condition" => condition = Some(Condition::parse(value)?),
                "accuracy" => {
                    accuracy = Some(value.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("bad accuracy {value:?}"))
                    })?)
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown run record field {key:?}"
                    )))
                }
            }
        }
        let missing = |name: &str| Error::InvalidArgument(format!("run record missing {name}"));
        Ok(RunRecord {
            run: run.ok_or_else(|| missing("run"))?,
            model: model.ok_or_else(|| missing("model"))?,
            condition: condition.ok_or_else(|| missing("condition"))?,
            accuracy: accuracy.ok_or_else(|| missing("accuracy"))?,
        })
    }
}

pub fn render_run_records(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.render_line());
        out.push('\n');
    }
    out
}

pub fn parse_run_records(text: &str) -> Result<Vec<RunRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(RunRecord::parse_line)
        .collect()
}

/// One aggregated cell: per-run accuracies with mean and sample std.
#[derive(Debug, Clone)]
pub struct ReportCell {
    pub model: ModelKind,
    pub condition: Condition,
    pub runs: Vec<f64>,
}

impl ReportCell {
    pub fn mean(&self) -> f64 {
        self.runs.iter().sum::<f64>() / self.runs.len() as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.runs.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .runs
            .iter()
            .map(|&x| (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    }
}

/// Aggregated accuracy report in the shape of the paper's tables: one row
/// per model, clean and distorted columns.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub arch: String,
    pub dataset: String,
    pub cells: Vec<ReportCell>,
}

impl MetricsReport {
    pub fn cell(&self, model: ModelKind, condition: Condition) -> &ReportCell {
        self.cells
            .iter()
            .find(|c| c.model == model && c.condition == condition)
            .expect("report holds all six cells")
    }

    pub fn from_run_records(
        arch: &str,
        dataset: &str,
        records: &[RunRecord],
    ) -> Result<MetricsReport> {
        let mut cells = Vec::new();
        let mut runs: Vec<usize> = records.iter().map(|r| r.run).collect();
        runs.sort_unstable();
        runs.dedup();
        for model in ModelKind::ALL {
            for condition in Condition::ALL {
                let mut values = Vec::with_capacity(runs.len());
                for &run in &runs {
                    let record = records
                        .iter()
                        .find(|r| r.run == run && r.model == model && r.condition == condition)
                        .ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "missing record for run {run}, {} {}",
                                model.name(),
                                condition.name()
                            ))
                        })?;
                    values.push(record.accuracy);
                }
                if values.is_empty() {
                    return Err(Error::InvalidArgument("no run records".into()));
                }
                cells.push(ReportCell {
                    model,
                    condition,
                    runs: values,
                });
            }
        }
        Ok(MetricsReport {
            arch: arch.into(),
            dataset: dataset.into(),
            cells,
        })
    }

    /// Plain-text aligned table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "accuracy ({} runs, mean +- std) | arch {} | dataset {}\n",
            self.cells[0].runs.len(),
            self.arch,
            self.dataset
        ));
        out.push_str(&format!(
            "{:<6} {:>20} {:>20}\n",
            "model", "clean", "distorted"
        ));
        for model in ModelKind::ALL {
            let clean = self.cell(model, Condition::Clean);
            let distorted = self.cell(model, Condition::Distorted);
            out.push_str(&format!(
                "{:<6} {:>20} {:>20}\n",
                model.name(),
                format!("{:.4} +- {:.4}", clean.mean(), clean.std()),
                format!("{:.4} +- {:.4}", distorted.mean(), distorted.std()),
            ));
        }
        out
    }

    /// Machine-readable records, one line per cell.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for cell in &self.cells {
            out.push_str(&format!(
                "model={} arch={} dataset={} condition={} mean={} std={}\n",
                cell.model.name(),
                self.arch,
                self.dataset,
                cell.condition.name(),
                cell.mean(),
                cell.std()
            ));
        }
        out
    }
}

/// Everything a finished experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub run_records: Vec<RunRecord>,
    /// Traces of the first run's agent over the distorted test sample.
    pub traces: Vec<EpisodeTrace>,
    /// Chains the distortion harness applied to the traced test images.
    pub applied_chains: Vec<TransformChain>,
}

struct SingleRun {
    records: Vec<RunRecord>,
    traces: Vec<EpisodeTrace>,
}

/// Derive the per-run training seed from the experiment seed.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add((run as u64 + 1).wrapping_mul(7919))
}

/// Execute the full methodology over `cfg.runs` seeds.
pub fn run_experiment<S: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = super::build_data::<S>(cfg).map_err(|e| e.in_stage("build_data"))?;
    let distortion = cfg.distortion_with_seed(cfg.seed.wrapping_add(31));
    let (distorted_test, applied_chains) =
        distort(&data.test, &distortion).map_err(|e| e.in_stage("distort_test"))?;

    let run_once = |run: usize| -> Result<SingleRun> {
        let seed = run_seed(cfg.seed, run);
        let stage = |name: &str| format!("{name}(run {run})");

        let nn = train_nn(cfg, &data.train, &data.val, seed)
            .map_err(|e| e.in_stage(stage("train_nn")))?;
        let rl = train_rl(cfg, &data.train, &data.val, seed)
            .map_err(|e| e.in_stage(stage("train_rl")))?;
        let set = TransformSet::of_kind(cfg.agent_set);
        let preprocessed = preprocess_dataset(&rl.qnet, &set, cfg.max_len, &data.train)
            .map_err(|e| e.in_stage(stage("preprocess_dataset")))?;
        let cl = train_cl(cfg, &rl.qnet, &preprocessed, &data.val, seed)
            .map_err(|e| e.in_stage(stage("train_cl")))?;

        let mut records = Vec::with_capacity(6);
        for (model_kind, model) in [
            (ModelKind::Nn, Model::Classifier(&nn.network)),
            (
                ModelKind::Rl,
                Model::Agent {
                    qnet: &rl.qnet,
                    set: &set,
                    max_len: cfg.max_len,
                },
            ),
            (ModelKind::Cl, Model::Classifier(&cl.network)),
        ] {
            let policy = match model_kind {
                ModelKind::Rl => EvalPolicy::RlTestTime,
                _ => EvalPolicy::Plain,
            };
            for (condition, ds) in [
                (Condition::Clean, &data.test),
                (Condition::Distorted, &distorted_test),
            ] {
                let outcome = evaluate(&model, ds, policy)
                    .map_err(|e| e.in_stage(stage("evaluate")))?;
                records.push(RunRecord {
                    run,
                    model: model_kind,
                    condition,
                    accuracy: outcome.accuracy(),
                });
            }
        }

        let traces = if run == 0 {
            trace_episodes(&rl.qnet, &set, cfg.max_len, &distorted_test, cfg.trace_count)
                .map_err(|e| e.in_stage(stage("trace")))?
        } else {
            Vec::new()
        };
        Ok(SingleRun { records, traces })
    };

    let runs: Vec<Result<SingleRun>> = if cfg.runs > 1 {
        (0..cfg.runs).into_par_iter().map(run_once).collect()
    } else {
        (0..cfg.runs).map(run_once).collect()
    };

    let mut run_records = Vec::new();
    let mut traces = Vec::new();
    for run in runs {
        let mut run = run?;
        run_records.append(&mut run.records);
        traces.append(&mut run.traces);
    }

    let report = MetricsReport::from_run_records(
        cfg.arch.name(),
        &cfg.dataset_name(),
        &run_records,
    )?;
    Ok(ExperimentOutcome {
        report,
        run_records,
        traces,
        applied_chains,
    })
}

/// Sanity bound asserted by tests: distortion cannot systematically help a
/// model, up to sampling slack.
pub fn distorted_within_slack(report: &MetricsReport, slack: f64) -> bool {
    ModelKind::ALL.iter().all(|&model| {
        report.cell(model, Condition::Distorted).mean()
            <= report.cell(model, Condition::Clean).mean() + slack
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(run: usize, model: ModelKind, condition: Condition, acc: f64) -> RunRecord {
        RunRecord {
            run,
            model,
            condition,
            accuracy: acc,
        }
    }

    fn full_records(runs: usize) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for run in 0..runs {
            for model in ModelKind::ALL {
                for condition in Condition::ALL {
                    out.push(record(run, model, condition, 0.5 + 0.01 * run as f64));
                }
            }
        }
        out
    }

    #[test]
    fn run_record_lines_round_trip() {
        let r = record(3, ModelKind::Rl, Condition::Distorted, 0.9775);
        assert_eq!(RunRecord::parse_line(&r.render_line()).unwrap(), r);
    }

    #[test]
    fn report_aggregates_all_six_cells() {
        let report = MetricsReport::from_run_records("arch1", "glyphs", &full_records(5)).unwrap();
        assert_eq!(report.cells.len(), 6);
        for cell in &report.cells {
            assert_eq!(cell.runs.len(), 5);
            assert!((cell.mean() - 0.52).abs() < 1e-12);
            assert!(cell.std() > 0.0);
        }
    }

    #[test]
    fn single_run_std_is_zero() {
        let report = MetricsReport::from_run_records("arch1", "glyphs", &full_records(1)).unwrap();
        for cell in &report.cells {
            assert_eq!(cell.std(), 0.0);
        }
    }

    #[test]
    fn missing_cell_rejected() {
        let mut records = full_records(2);
        records.pop();
        assert!(MetricsReport::from_run_records("arch1", "glyphs", &records).is_err());
    }

    #[test]
    fn table_contains_all_models() {
        let report = MetricsReport::from_run_records("arch1", "glyphs", &full_records(3)).unwrap();
        let table = report.render_table();
        for model in ["NN", "RL", "CL"] {
            assert!(table.contains(model), "{table}");
        }
        let records = report.render_records();
        assert_eq!(records.lines().count(), 6);
    }

    #[test]
    fn run_seeds_are_distinct() {
        let seeds: Vec<u64> = (0..10).map(|r| run_seed(42, r)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }
}
