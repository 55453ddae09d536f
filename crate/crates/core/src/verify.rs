//! Numerical verification suite behind `asynczo verify`.
//!
//! Each check returns a [`CheckResult`]; the report renders as flat
//! `key = value` blocks. Failures name the inequality, the observed value,
//! the bound and the tolerance.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::analysis::{
    check_smoothing_error_bounds, extremal_sequence, recursive_sequence_bound, recursive_sequence_sum_bound,
    SecondMomentTracker, SequenceBoundParams, SmoothingBoundReport, SmoothingOracle, Welford, MC_SIGMAS,
};
use crate::block::{BlockLayout, BlockVector};
use crate::error::{Error, Result};
use crate::objectives::{estimate_constants, make_benchmark, Objective, ObjectiveHandle, QuadraticObjective};
use crate::rng::{RngStream, StreamRole};
use crate::scheduler::{Activation, ActivationModel, AsyncDriver, Budget, EstimatorKind, RunConfig, Schedule};

/// Relative tolerance of the sequence-bound checks.
pub const SEQUENCE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// Smoothing-error bounds on value and gradient.
    Smoothing,
    /// The asynchronous residual estimator is unbiased for the smoothed gradient.
    Unbiasedness,
    /// Closed-form bounds on the recursive sequence.
    Sequence,
    /// Second-moment diagnostics of a benchmark run.
    Moments,
    All,
}

impl Selector {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "smoothing" => Selector::Smoothing,
            "unbiasedness" => Selector::Unbiasedness,
            "sequence" => Selector::Sequence,
            "moments" => Selector::Moments,
            "all" => Selector::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown check `{other}` (expected smoothing, unbiasedness, sequence, moments or all)"
                )))
            }
        })
    }

    fn includes(self, other: Selector) -> bool {
        self == Selector::All || self == other
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies every `L1` fed to the smoothing check. `0.5` is a
    /// negative control that must produce violations.
    pub l1_scale: f64,
    pub unbiased_samples: usize,
    pub smoothing_points: usize,
    pub mc_samples: usize,
    pub sequence_draws: usize,
    pub moments_queries: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            l1_scale: 1.0,
            unbiased_samples: 200_000,
            smoothing_points: 50,
            mc_samples: 4_000,
            sequence_draws: 1_000,
            moments_queries: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub fields: Vec<(String, String)>,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), passed: true, fields: Vec::new(), failures: Vec::new() }
    }

    fn field(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    fn fail(&mut self, msg: String) {
        self.passed = false;
        self.failures.push(msg);
    }

    pub fn render(&self) -> String {
        let mut out = format!("[{}]\nstatus = {}\n", self.name, if self.passed { "pass" } else { "FAIL" });
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        // The first few are enough to diagnose; the count is in the fields.
        for (i, f) in self.failures.iter().take(10).enumerate() {
            let _ = writeln!(out, "failure.{i} = {f}");
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&c.render());
            out.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(out, "[summary]\nchecks = {}\nfailed = {failed}", self.checks.len());
        out
    }
}

pub fn run_verification_suite(selector: Selector, opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    if selector.includes(Selector::Smoothing) {
        report.checks.extend(smoothing_checks(opts)?);
    }
    if selector.includes(Selector::Unbiasedness) {
        report.checks.extend(unbiasedness_checks(opts)?);
    }
    if selector.includes(Selector::Sequence) {
        report.checks.extend(sequence_checks(opts.sequence_draws, opts.seed)?);
    }
    if selector.includes(Selector::Moments) {
        report.checks.push(moments_check(opts)?);
    }
    Ok(report)
}

/// Random quadratic on blocks `[2, 3, 5]` used by the smoothing and
/// unbiasedness checks.
pub fn verification_quadratic(seed: u64) -> Result<QuadraticObjective> {
    let mut rng = RngStream::new(seed, StreamRole::Dataset.stream_id(0));
    QuadraticObjective::random(BlockLayout::new(vec![2, 3, 5])?, &mut rng)
}

/// The five-agent benchmark used throughout the suite.
pub fn verification_benchmark(seed: u64) -> Result<crate::objectives::FeatureLearningObjective> {
    let mut rng = RngStream::new(seed, StreamRole::Dataset.stream_id(1));
    make_benchmark(5, 20, 10, &mut rng)
}

fn random_points(layout: &BlockLayout, count: usize, spread: f64, rng: &mut RngStream) -> Vec<BlockVector> {
    (0..count)
        .map(|_| {
            let mut v = BlockVector::standard_gaussian(layout, rng);
            v.values_mut().iter_mut().for_each(|x| *x *= spread);
            v
        })
        .collect()
}

/// Smoothing-error bounds on the quadratic (closed forms) and the benchmark
/// (Monte Carlo, empirical `L1`) for `μ ∈ {0.01, 0.1}`.
pub fn smoothing_checks(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let quad = verification_quadratic(opts.seed)?;
    let bench = verification_benchmark(opts.seed)?;
    let mut rng = RngStream::new(opts.seed, StreamRole::Oracle.stream_id(10));
    let bench_l1 = estimate_constants(&bench, 200, 4, 1.0, &mut rng)?.l1;

    let cases: [(&str, &dyn Objective, f64, bool); 2] =
        [("quadratic", &quad, quad.metadata().smooth_l1.unwrap_or(f64::NAN), false), ("benchmark", &bench, bench_l1, true)];
    for (name, obj, l1, estimated) in cases {
        let points = random_points(obj.layout(), opts.smoothing_points, 1.0, &mut rng);
        for (j, mu) in [0.01, 0.1].into_iter().enumerate() {
            let oracle_rng = RngStream::new(opts.seed, StreamRole::Oracle.stream_id(20 + j as u64));
            let l1_used = l1 * opts.l1_scale;
            let r = check_smoothing_error_bounds(obj, &points, mu, l1_used, opts.mc_samples, oracle_rng)?;
            out.push(smoothing_result(&format!("smoothing.{name}.mu={mu}"), &r, l1_used, estimated, opts.l1_scale));
        }
    }
    Ok(out)
}

fn smoothing_result(name: &str, r: &SmoothingBoundReport, l1: f64, estimated: bool, scale: f64) -> CheckResult {
    let mut c = CheckResult::new(name);
    c.field("l1", l1);
    c.field("l1_source", if estimated { "empirical" } else { "metadata" });
    if scale != 1.0 {
        c.field("l1_scale", scale);
    }
    c.field("checks", r.checks);
    c.field("violations", r.violations.len());
    c.field("min_slack", r.min_slack);
    c.field("max_observed_over_bound", r.max_ratio);
    for v in &r.violations {
        c.fail(format!(
            "{} at point {} block {}: observed {:e} > bound {:e} + tolerance {:e}",
            v.inequality.describe(),
            v.point,
            v.agent,
            v.observed,
            v.bound,
            v.tolerance
        ));
    }
    c
}

/// Monte-Carlo mean and standard error of `samples` asynchronous residual
/// estimates of block `agent` at the fixed point `x`.
///
/// Every sample comes from its own short run: the agent bootstraps at `x`,
/// `interleave` random activations move the iterate (possibly including
/// the agent itself), then the iterate is reset to `x` and the agent is
/// activated once more. The stored baseline is therefore genuinely stale.
#[allow(clippy::too_many_arguments)]
pub fn residual_async_mean(
    objective: Arc<dyn Objective>,
    x: &BlockVector,
    agent: usize,
    mu: f64,
    alpha: f64,
    interleave: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = objective.layout().clone();
    layout.check_agent(agent)?;
    let mut acc = Welford::new(layout.block_dim(agent));
    for s in 0..samples {
        let mut config = RunConfig::new(
            Budget::Iterations(u64::MAX),
            EstimatorKind::ResidualAsync,
            Schedule::Manual { alpha, mu },
            seed,
        );
        config.trial_id = s as u64;
        let model = ActivationModel::uniform(layout.num_blocks());
        let mut driver = AsyncDriver::new(ObjectiveHandle::new(objective.clone()), model, config, x.clone())?;
        driver.step_agent(Activation { agent, time: None })?;
        for _ in 0..interleave {
            driver.step()?;
        }
        driver.set_x(x.clone())?;
        let report = driver.step_agent(Activation { agent, time: None })?;
        let est = report
            .estimate
            .ok_or_else(|| Error::Domain("agent produced no estimate after its bootstrap".into()))?;
        acc.push(&est.block());
    }
    Ok((acc.mean().to_vec(), acc.stderr()))
}

/// `|a_j − b_j| ≤ 3·sqrt(se_a_j² + se_b_j²)` for every coordinate.
fn compare_means(c: &mut CheckResult, label: &str, a: &[f64], se_a: &[f64], b: &[f64], se_b: Option<&[f64]>) {
    let mut worst = 0.0f64;
    for j in 0..a.len() {
        let se = (se_a[j].powi(2) + se_b.map_or(0.0, |s| s[j].powi(2))).sqrt();
        let diff = (a[j] - b[j]).abs();
        worst = worst.max(diff / se);
        if !(diff <= MC_SIGMAS * se) {
            c.fail(format!(
                "{label} coordinate {j}: |E[G] - grad f_mu| = {diff:e} > {MC_SIGMAS} x combined stderr {se:e}"
            ));
        }
    }
    c.field(&format!("{label}.max_z"), worst);
}

/// Unbiasedness of the asynchronous residual estimator: against the closed
/// form on the quadratic, and against the smoothing oracle on the benchmark.
pub fn unbiasedness_checks(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let (mu, alpha, interleave) = (0.1, 0.02, 4);
    let mut out = Vec::new();

    let quad: Arc<dyn Objective> = Arc::new(verification_quadratic(opts.seed)?);
    let mut rng = RngStream::new(opts.seed, StreamRole::Init.stream_id(30));
    let x = BlockVector::standard_gaussian(quad.layout(), &mut rng);
    let mut c = CheckResult::new("unbiasedness.quadratic");
    c.field("samples_per_block", opts.unbiased_samples);
    c.field("mu", mu);
    for agent in 0..quad.layout().num_blocks() {
        let exact = quad
            .smoothed_gradient_exact(x.values(), agent, mu)
            .ok_or_else(|| Error::Domain("quadratic lacks a closed-form smoothed gradient".into()))?;
        let (mean, se) =
            residual_async_mean(quad.clone(), &x, agent, mu, alpha, interleave, opts.unbiased_samples, opts.seed)?;
        compare_means(&mut c, &format!("block{agent}"), &mean, &se, &exact, None);
    }
    out.push(c);

    let bench: Arc<dyn Objective> = Arc::new(verification_benchmark(opts.seed)?);
    let x = BlockVector::standard_gaussian(bench.layout(), &mut rng);
    let samples = (opts.unbiased_samples / 2).max(1_000);
    let mut c = CheckResult::new("unbiasedness.benchmark");
    c.field("samples", samples);
    c.field("mu", mu);
    let agent = 0;
    let (mean, se) = residual_async_mean(bench.clone(), &x, agent, mu, alpha, interleave, samples, opts.seed)?;
    let mut oracle = SmoothingOracle::new(bench.as_ref(), mu, samples, RngStream::new(opts.seed, StreamRole::Oracle.stream_id(31)))?;
    let g = oracle.smoothed_gradient_block(&x, agent)?;
    compare_means(&mut c, &format!("block{agent}"), &mean, &se, &g.estimate, Some(&g.stderr));
    out.push(c);
    Ok(out)
}

/// Extremal recursion against the per-step and sum bounds for `draws`
/// random parameter sets with `γ + β ∈ (0, 0.99)`.
pub fn sequence_checks(draws: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = RngStream::new(seed, StreamRole::Oracle.stream_id(40));
    let mut step = CheckResult::new("sequence.per_step");
    let mut sum = CheckResult::new("sequence.sum");
    let (mut step_violations, mut sum_violations, mut step_checks) = (0usize, 0usize, 0usize);
    let (mut worst_step, mut worst_sum) = (0.0f64, 0.0f64);
    for d in 0..draws {
        let r = 0.99 * (1.0 - rng.uniform()); // (0, 0.99]
        let r = r.min(0.99 - 1e-12);
        let split = rng.uniform();
        let gamma = (r * (1.0 - split)).max(f64::MIN_POSITIVE);
        let beta = r - gamma;
        let m_const = 10.0 * rng.uniform();
        let v0 = 10.0 * rng.uniform();
        let horizon = 1 + rng.below(200) as u64;
        let p = SequenceBoundParams::new(gamma, beta.max(0.0), m_const, v0, horizon)?;
        let v = extremal_sequence(&p, horizon);
        for (k, &vk) in v.iter().enumerate().skip(1) {
            step_checks += 1;
            let bound = recursive_sequence_bound(&p, k as u64)?;
            worst_step = worst_step.max(excess(vk, bound));
            if vk > bound * (1.0 + SEQUENCE_REL_TOL) {
                step_violations += 1;
                step.fail(format!(
                    "V_k <= gamma r^(k-1) V0 + (1-beta-gamma r^(k-1))/(1-r) M, draw {d} (gamma={gamma}, beta={beta}, M={m_const}, V0={v0}) k={k}: observed {vk:e} > bound {bound:e} with relative tolerance {SEQUENCE_REL_TOL:e}"
                ));
            }
        }
        let total: f64 = v.iter().sum();
        let bound = recursive_sequence_sum_bound(&p, horizon)?;
        worst_sum = worst_sum.max(excess(total, bound));
        if total > bound * (1.0 + SEQUENCE_REL_TOL) {
            sum_violations += 1;
            sum.fail(format!(
                "sum V_k <= (1-beta)/(1-r) V0 + (T-1)(1-beta)/(1-r) M - gamma/(1-r)^2 M, draw {d} (gamma={gamma}, beta={beta}, M={m_const}, V0={v0}) T={horizon}: observed {total:e} > bound {bound:e} with relative tolerance {SEQUENCE_REL_TOL:e}"
            ));
        }
    }
    step.field("draws", draws);
    step.field("checks", step_checks);
    step.field("violations", step_violations);
    step.field("max_relative_excess", worst_step);
    sum.field("draws", draws);
    sum.field("violations", sum_violations);
    sum.field("max_relative_excess", worst_sum);
    Ok(vec![step, sum])
}

fn excess(observed: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (observed - bound) / bound
    } else if observed > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Second moments of the residual estimates along a benchmark run.
///
/// Only finiteness is asserted; the comparison with the worst-case
/// second-moment bound is reported as a diagnostic.
pub fn moments_check(opts: &VerifyOptions) -> Result<CheckResult> {
    let (alpha, mu) = (0.5, 0.1);
    let bench = verification_benchmark(opts.seed)?;
    let layout = bench.layout().clone();
    let n = layout.num_blocks();
    let mut rng = RngStream::new(opts.seed, StreamRole::Oracle.stream_id(50));
    let l0 = estimate_constants(&bench, 200, 4, 1.0, &mut rng)?.l0;
    let x0 = BlockVector::standard_gaussian(&layout, &mut RngStream::new(opts.seed, StreamRole::Init.stream_id(50)));
    let config = RunConfig::new(
        Budget::Queries(opts.moments_queries),
        EstimatorKind::ResidualAsync,
        Schedule::Manual { alpha, mu },
        opts.seed,
    );
    let mut driver = AsyncDriver::new(ObjectiveHandle::new(Arc::new(bench)), ActivationModel::uniform(n), config, x0)?;
    let mut tracker = SecondMomentTracker::new(n);
    while driver.has_budget() {
        if let Some(est) = driver.step()?.estimate {
            tracker.track(&est);
        }
    }

    let mut c = CheckResult::new("moments.benchmark");
    c.field("queries", driver.clock().queries);
    c.field("estimates", tracker.count());
    let mean = tracker.mean().unwrap_or(0.0);
    c.field("mean_sq_norm", mean);
    for i in 0..n {
        c.field(&format!("agent{i}.mean_sq_norm"), tracker.agent_mean(i).unwrap_or(0.0));
    }
    let windows = tracker.window_means(tracker.count().div_ceil(5).max(1));
    c.field(
        "window_means",
        windows.iter().map(|w| format!("{w:e}")).collect::<Vec<_>>().join(" "),
    );
    c.field("l0_empirical", l0);
    let n_bar = layout.block_dims().iter().copied().max().unwrap_or(1) as u64;
    let v0 = tracker.values().next().unwrap_or(0.0);
    match SequenceBoundParams::for_second_moments(n_bar, l0, alpha, mu, 1.0 / n as f64, tracker.count() as u64, v0) {
        Ok(p) => {
            let bound = recursive_sequence_sum_bound(&p, p.horizon)?;
            c.field("diagnostic.sum_bound", bound);
            c.field("diagnostic.observed_sum", tracker.sum());
        }
        Err(e) => c.field("diagnostic.sum_bound", format!("not applicable ({e})")),
    }
    if !mean.is_finite() {
        c.fail(format!("mean squared estimate norm is not finite: {mean}"));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_parsing() {
        assert_eq!(Selector::parse("sequence").unwrap(), Selector::Sequence);
        assert!(Selector::parse("everything").is_err());
    }

    #[test]
    fn per_step_sequence_bound_holds_and_sum_bound_is_reported() {
        let checks = sequence_checks(200, 3).unwrap();
        assert!(checks[0].passed, "{}", checks[0].render());
        // The sum bound omits a positive term and is violated for large M.
        assert!(!checks[1].passed);
        assert!(checks[1].failures[0].contains("observed"));
    }

    #[test]
    fn halved_l1_is_caught() {
        let opts = VerifyOptions { l1_scale: 0.5, smoothing_points: 5, mc_samples: 500, ..Default::default() };
        let checks = smoothing_checks(&opts).unwrap();
        let quad = checks.iter().find(|c| c.name == "smoothing.quadratic.mu=0.1").unwrap();
        assert!(!quad.passed);
        assert!(quad.render().contains("bound"));
    }

    #[test]
    fn report_renders_key_values() {
        let r = run_verification_suite(Selector::Sequence, &VerifyOptions { sequence_draws: 10, ..Default::default() }).unwrap();
        let text = r.render();
        assert!(text.contains("[sequence.per_step]\nstatus = pass\n"));
        assert!(text.contains("[summary]\nchecks = 2\n"));
    }
}
