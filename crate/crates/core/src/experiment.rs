//! Multi-trial experiment runner.
//!
//! Reads a TOML configuration (see `docs/config.md`), runs every
//! `(trial, estimator)` pair and writes
//!
//! * `trace_<estimator>_<trial>.csv`: one row per `record_every` queries;
//! * `summary.csv`: mean and sample standard deviation of the loss across
//!   non-diverged trials at each recorded query count;
//! * `report.txt`: `key = value` lines with counts and final comparisons.
//!
//! Within a trial every estimator sees the same dataset, the same initial
//! point and the same activation stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use crate::block::{BlockLayout, BlockVector};
use crate::error::{Error, Result};
use crate::objectives::{make_benchmark, NoiseKind, NoiseSpec, Objective, ObjectiveHandle, QuadraticObjective};
use crate::rng::{RngStream, StreamRole};
use crate::scheduler::{
    run_async, ActivationModel, Budget, EstimatorKind, RateScheduleVariant, Record, RunConfig, Schedule,
};

pub const TRACE_HEADER: &str = "trial,estimator,queries,iteration,agent,loss,grad_norm_sq";
pub const SUMMARY_HEADER: &str = "estimator,queries,trials,mean_loss,std_loss";

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Benchmark { agents: usize, samples: usize, input_dim: usize },
    QuadraticFile(PathBuf),
    /// Random quadratic drawn once from `seed`, shared by all trials.
    QuadraticGenerated { block_dims: Vec<usize>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub noise: Option<NoiseSpec>,
    pub estimators: Vec<EstimatorKind>,
    /// `None` means uniform over agents.
    pub activation: Option<ActivationModel>,
    pub budget: Budget,
    pub schedule: Schedule,
    pub trials: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub record_every: u64,
    pub grad_norm: bool,
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Five agents, twenty samples, ten inputs per agent, `μ = 0.1`,
    /// `α = 0.5`, ten trials, `10⁴` queries, uniform activation.
    pub fn benchmark_defaults(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            objective: ObjectiveSpec::Benchmark { agents: 5, samples: 20, input_dim: 10 },
            noise: None,
            estimators: vec![EstimatorKind::ResidualAsync, EstimatorKind::TwoPointAsync],
            activation: None,
            budget: Budget::Queries(10_000),
            schedule: Schedule::Manual { alpha: 0.5, mu: 0.1 },
            trials: 10,
            seed: 1,
            out_dir: out_dir.into(),
            record_every: 100,
            grad_norm: false,
            jobs: 1,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Parses a config; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.into_config(base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("run.trials must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("run.estimators must name at least one estimator".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("run.record_every must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let ObjectiveSpec::QuadraticFile(p) = &self.objective {
            if !p.exists() {
                return Err(Error::Config(format!("objective.file {} does not exist", p.display())));
            }
        }
        if let Some(m) = &self.activation {
            m.validate().map_err(|e| Error::Config(format!("activation: {e}")))?;
        }
        match &self.schedule {
            Schedule::Manual { alpha, mu } => {
                if !(*alpha > 0.0) {
                    return Err(Error::Config(format!("run.alpha must be positive, got {alpha}")));
                }
                if !(*mu > 0.0) {
                    return Err(Error::Config(format!("run.mu must be positive, got {mu}")));
                }
            }
            Schedule::PerAgent { .. } | Schedule::Rate(_) => {}
        }
        Ok(())
    }

    fn build_objective(&self, trial: u64) -> Result<Arc<dyn Objective>> {
        Ok(match &self.objective {
            ObjectiveSpec::Benchmark { agents, samples, input_dim } => {
                let mut rng = RngStream::for_role(self.seed, trial, StreamRole::Dataset);
                Arc::new(make_benchmark(*agents, *samples, *input_dim, &mut rng)?)
            }
            ObjectiveSpec::QuadraticFile(path) => Arc::new(QuadraticObjective::from_toml_file(path)?),
            ObjectiveSpec::QuadraticGenerated { block_dims, seed } => {
                let mut rng = RngStream::new(*seed, StreamRole::Dataset.stream_id(0));
                Arc::new(QuadraticObjective::random(BlockLayout::new(block_dims.clone())?, &mut rng)?)
            }
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    objective: RawObjective,
    run: RawRun,
    activation: Option<RawActivation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    kind: String,
    agents: Option<usize>,
    samples: Option<usize>,
    input_dim: Option<usize>,
    file: Option<PathBuf>,
    block_dims: Option<Vec<usize>>,
    seed: Option<u64>,
    noise: Option<String>,
    noise_variance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    estimators: Vec<String>,
    trials: Option<u64>,
    seed: Option<u64>,
    budget_queries: Option<u64>,
    budget_iterations: Option<u64>,
    record_every: Option<u64>,
    schedule: Option<String>,
    alpha: Option<f64>,
    mu: Option<f64>,
    grad_norm: Option<bool>,
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActivation {
    kind: String,
    probs: Option<Vec<f64>>,
    rates: Option<Vec<f64>>,
}

fn missing(field: &str) -> Error {
    Error::Config(format!("missing required field `{field}`"))
}

impl RawConfig {
    fn into_config(self, base: &Path) -> Result<ExperimentConfig> {
        let o = self.objective;
        let objective = match o.kind.as_str() {
            "benchmark" => ObjectiveSpec::Benchmark {
                agents: o.agents.unwrap_or(5),
                samples: o.samples.unwrap_or(20),
                input_dim: o.input_dim.unwrap_or(10),
            },
            "quadratic" => match (o.file, o.block_dims) {
                (Some(f), None) => ObjectiveSpec::QuadraticFile(base.join(f)),
                (None, Some(dims)) => ObjectiveSpec::QuadraticGenerated { block_dims: dims, seed: o.seed.unwrap_or(0) },
                _ => {
                    return Err(Error::Config(
                        "objective: quadratic needs exactly one of `file` or `block_dims`".into(),
                    ))
                }
            },
            other => return Err(Error::Config(format!("objective.kind: unknown objective `{other}`"))),
        };
        let noise = match (o.noise.as_deref(), o.noise_variance) {
            (None, None) => None,
            (kind, var) => {
                let kind = match kind.unwrap_or("gaussian-truncated") {
                    "uniform" => NoiseKind::AdditiveUniform,
                    "gaussian-truncated" => NoiseKind::AdditiveGaussianTruncated,
                    other => return Err(Error::Config(format!("objective.noise: unknown noise `{other}`"))),
                };
                Some(NoiseSpec::new(kind, var.ok_or_else(|| missing("objective.noise_variance"))?)?)
            }
        };

        let r = self.run;
        let estimators = r
            .estimators
            .iter()
            .map(|s| EstimatorKind::parse(s).map_err(|e| Error::Config(format!("run.estimators: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let budget = match (r.budget_queries, r.budget_iterations) {
            (Some(q), None) => Budget::Queries(q),
            (None, Some(t)) => Budget::Iterations(t),
            (None, None) => Budget::Queries(10_000),
            (Some(_), Some(_)) => {
                return Err(Error::Config("run: set only one of budget_queries or budget_iterations".into()))
            }
        };
        let schedule = match r.schedule.as_deref().unwrap_or("manual") {
            "manual" => Schedule::Manual {
                alpha: r.alpha.ok_or_else(|| missing("run.alpha"))?,
                mu: r.mu.ok_or_else(|| missing("run.mu"))?,
            },
            "rate" => Schedule::Rate(RateScheduleVariant::SmoothingScaled),
            "rate-step-scaled" => Schedule::Rate(RateScheduleVariant::StepScaled),
            other => return Err(Error::Config(format!("run.schedule: unknown schedule `{other}`"))),
        };
        if !matches!(schedule, Schedule::Manual { .. }) && (r.alpha.is_some() || r.mu.is_some()) {
            return Err(Error::Config("run.alpha/run.mu only apply to the manual schedule".into()));
        }

        let activation = match self.activation {
            None => None,
            Some(a) => match a.kind.as_str() {
                "uniform" => None,
                "categorical" => {
                    Some(ActivationModel::Categorical { probs: a.probs.ok_or_else(|| missing("activation.probs"))? })
                }
                "clocks" => {
                    Some(ActivationModel::ExponentialClocks { rates: a.rates.ok_or_else(|| missing("activation.rates"))? })
                }
                other => return Err(Error::Config(format!("activation.kind: unknown model `{other}`"))),
            },
        };

        let cfg = ExperimentConfig {
            objective,
            noise,
            estimators,
            activation,
            budget,
            schedule,
            trials: r.trials.unwrap_or(10),
            seed: r.seed.unwrap_or(1),
            out_dir: r.out.map(|o| base.join(o)).unwrap_or_else(|| PathBuf::from("out")),
            record_every: r.record_every.unwrap_or(100),
            grad_norm: r.grad_norm.unwrap_or(false),
            jobs: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trace of one `(trial, estimator)` run.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub trial: u64,
    pub estimator: EstimatorKind,
    pub rows: Vec<Record>,
    /// `(iteration, estimate norm)` when the run hit the divergence guard.
    pub diverged: Option<(u64, f64)>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPoint {
    pub queries: u64,
    pub trials: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub traces: Vec<TrialTrace>,
    /// Per estimator, in config order.
    pub series: Vec<(EstimatorKind, Vec<SummaryPoint>)>,
    pub report: String,
}

impl ExperimentSummary {
    pub fn series_for(&self, kind: EstimatorKind) -> Option<&[SummaryPoint]> {
        self.series.iter().find(|s| s.0 == kind).map(|s| s.1.as_slice())
    }

    /// Largest query count present in every estimator's series.
    pub fn final_common_queries(&self) -> Option<u64> {
        self.series
            .iter()
            .map(|(_, pts)| pts.last().map(|p| p.queries))
            .collect::<Option<Vec<_>>>()?
            .into_iter()
            .min()
    }

    pub fn mean_at(&self, kind: EstimatorKind, queries: u64) -> Option<f64> {
        self.series_for(kind)?.iter().find(|p| p.queries == queries).map(|p| p.mean_loss)
    }

    /// Loss of one trial at a recorded query count.
    pub fn trial_loss_at(&self, kind: EstimatorKind, trial: u64, queries: u64) -> Option<f64> {
        self.traces
            .iter()
            .find(|t| t.estimator == kind && t.trial == trial && t.diverged.is_none())?
            .rows
            .iter()
            .find(|r| r.queries == queries)
            .map(|r| r.loss)
    }
}

pub fn trace_file_name(kind: EstimatorKind, trial: u64) -> String {
    format!("trace_{}_{}.csv", kind.name(), trial)
}

fn run_one(config: &ExperimentConfig, trial: u64, kind: EstimatorKind) -> Result<TrialTrace> {
    let objective = config.build_objective(trial)?;
    let layout = objective.layout().clone();
    let model = config
        .activation
        .clone()
        .unwrap_or_else(|| ActivationModel::uniform(layout.num_blocks()));
    let x0 = BlockVector::standard_gaussian(&layout, &mut RngStream::for_role(config.seed, trial, StreamRole::Init));
    let mut handle = ObjectiveHandle::new(objective.clone());
    if let Some(noise) = config.noise {
        handle = handle.with_noise(noise, RngStream::for_role(config.seed, trial, StreamRole::Noise));
    }
    let run = RunConfig {
        budget: config.budget,
        estimator: kind,
        schedule: config.schedule.clone(),
        seed: config.seed,
        trial_id: trial,
        record_every: config.record_every,
        track_grad_norm: config.grad_norm,
        keep_wall_events: false,
    };
    let mut rows: Vec<Record> = Vec::new();
    let (diverged, final_loss) = match run_async(handle, model, run, x0, &mut rows) {
        Ok(out) => (None, Some(objective.value(out.x.values()))),
        Err(Error::Divergence { iteration, norm, .. }) => (Some((iteration, norm)), None),
        Err(e) => return Err(e),
    };
    Ok(TrialTrace { trial, estimator: kind, rows, diverged, final_loss })
}

pub fn write_trace(path: &Path, trace: &TrialTrace) -> Result<()> {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let g = r.grad_norm_sq.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.trial_id,
            trace.estimator.name(),
            r.queries,
            r.iteration,
            r.agent,
            r.loss,
            g
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(traces: &[TrialTrace], kind: EstimatorKind) -> Vec<SummaryPoint> {
    let mut grid: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let completed: Vec<&TrialTrace> =
        traces.iter().filter(|t| t.estimator == kind && t.diverged.is_none()).collect();
    for t in &completed {
        for r in &t.rows {
            grid.entry(r.queries).or_default().push(r.loss);
        }
    }
    grid.into_iter()
        .filter(|(_, v)| v.len() == completed.len())
        .map(|(queries, v)| {
            let (mean_loss, std_loss) = mean_std(&v);
            SummaryPoint { queries, trials: v.len(), mean_loss, std_loss }
        })
        .collect()
}

/// Runs every trial for every configured estimator and writes all outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let tasks: Vec<(u64, EstimatorKind)> =
        (0..config.trials).flat_map(|t| config.estimators.iter().map(move |&k| (t, k))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("jobs: {e}")))?;
    let mut traces = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(trial, kind)| {
                let trace = run_one(config, trial, kind)?;
                write_trace(&config.out_dir.join(trace_file_name(kind, trial)), &trace)?;
                Ok(trace)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    traces.sort_by_key(|t| (t.trial, config.estimators.iter().position(|&k| k == t.estimator)));

    let series: Vec<(EstimatorKind, Vec<SummaryPoint>)> =
        config.estimators.iter().map(|&k| (k, summarize(&traces, k))).collect();

    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for (kind, pts) in &series {
        for p in pts {
            let _ = writeln!(csv, "{},{},{},{},{}", kind.name(), p.queries, p.trials, p.mean_loss, p.std_loss);
        }
    }
    fs::write(config.out_dir.join("summary.csv"), csv)?;

    let mut summary = ExperimentSummary { traces, series, report: String::new() };
    summary.report = render_report(config, &summary);
    fs::write(config.out_dir.join("report.txt"), &summary.report)?;
    Ok(summary)
}

fn render_report(config: &ExperimentConfig, s: &ExperimentSummary) -> String {
    let mut out = String::new();
    let budget = match config.budget {
        Budget::Queries(q) => format!("queries:{q}"),
        Budget::Iterations(t) => format!("iterations:{t}"),
    };
    let _ = writeln!(out, "experiment.trials = {}", config.trials);
    let _ = writeln!(out, "experiment.seed = {}", config.seed);
    let _ = writeln!(out, "experiment.budget = {budget}");
    let _ = writeln!(out, "experiment.record_every = {}", config.record_every);
    for (kind, pts) in &s.series {
        let name = kind.name();
        let diverged: Vec<&TrialTrace> =
            s.traces.iter().filter(|t| t.estimator == *kind && t.diverged.is_some()).collect();
        let _ = writeln!(out, "estimator.{name}.completed = {}", config.trials as usize - diverged.len());
        let _ = writeln!(out, "estimator.{name}.diverged = {}", diverged.len());
        for t in diverged {
            let (it, norm) = t.diverged.unwrap();
            let _ = writeln!(out, "estimator.{name}.diverged.trial{} = iteration {it}, norm {norm:e}", t.trial);
        }
        if let Some(last) = pts.last() {
            let _ = writeln!(out, "estimator.{name}.final_queries = {}", last.queries);
            let _ = writeln!(out, "estimator.{name}.final_mean_loss = {}", last.mean_loss);
            let _ = writeln!(out, "estimator.{name}.final_std_loss = {}", last.std_loss);
        }
    }
    if let Some(q) = s.final_common_queries() {
        let _ = writeln!(out, "comparison.final_common_queries = {q}");
        for (i, (a, _)) in s.series.iter().enumerate() {
            for (b, _) in s.series.iter().skip(i + 1) {
                let (mut wins, mut paired) = (0, 0);
                for t in 0..config.trials {
                    if let (Some(la), Some(lb)) = (s.trial_loss_at(*a, t, q), s.trial_loss_at(*b, t, q)) {
                        paired += 1;
                        if la < lb {
                            wins += 1;
                        }
                    }
                }
                let _ = writeln!(out, "comparison.{}_below_{}.trials = {wins}/{paired}", a.name(), b.name());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = r#"
            [objective]
            kind = "benchmark"
            agents = 3
            samples = 4
            input_dim = 2

            [run]
            estimators = ["residual-async", "two-point-async"]
            trials = 2
            seed = 9
            budget_queries = 100
            record_every = 10
            alpha = 0.5
            mu = 0.1

            [activation]
            kind = "clocks"
            rates = [1.0, 2.0, 3.0]
        "#;
        let c = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(c.objective, ObjectiveSpec::Benchmark { agents: 3, samples: 4, input_dim: 2 });
        assert_eq!(c.budget, Budget::Queries(100));
        assert_eq!(c.trials, 2);
        assert!(matches!(c.activation, Some(ActivationModel::ExponentialClocks { .. })));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = "[objective]\nkind = \"benchmark\"\nagnets = 3\n[run]\nestimators = [\"residual-async\"]\nalpha = 0.5\nmu = 0.1\n";
        let e = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("agnets"), "{e}");
    }

    #[test]
    fn config_errors_name_the_field() {
        let base = "[objective]\nkind = \"benchmark\"\n[run]\nalpha = 0.5\nmu = 0.1\n";
        let e = ExperimentConfig::from_toml_str(&format!("{base}estimators = [\"sgd\"]\n"), Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("run.estimators"), "{e}");
        let e = ExperimentConfig::from_toml_str(&format!("{base}estimators = [\"residual-async\"]\ntrials = 0\n"), Path::new("."))
            .unwrap_err();
        assert!(e.to_string().contains("run.trials"), "{e}");
        let text = "[objective]\nkind = \"quadratic\"\nfile = \"nope.toml\"\n[run]\nestimators = [\"residual-async\"]\nalpha = 0.5\nmu = 0.1\n";
        let e = ExperimentConfig::from_toml_str(text, Path::new("/nonexistent")).unwrap_err();
        assert!(e.to_string().contains("objective.file"), "{e}");
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
