//! Verification instruments.
//!
//! * [`SmoothingOracle`] — Monte-Carlo (and, for quadratics, closed-form)
//!   values and block gradients of the block-wise Gaussian smoothing
//!   `f_μ(x) = E_u[f(x + μu)]`, `u` supported on one agent's block.
//! * [`check_smoothing_error_bounds`] — the `μ²L₁n_i/2` value bound and the
//!   `(μ/2)L₁(n_i+3)^{3/2}` gradient bound on the smoothing error.
//! * [`SequenceBoundParams`] and friends — the closed-form bounds for
//!   sequences obeying `V_k ≤ γ(V_{k−1} + βV_{k−2} + … + β^{k−1}V_0) + M`.
//! * [`SecondMomentTracker`]: running `‖G‖²` statistics of a run.

use crate::block::{sample_block_gaussian, BlockVector};
use crate::error::{Error, Result};
use crate::estimators::GradientEstimate;
use crate::objectives::Objective;
use crate::rng::RngStream;

/// Monte-Carlo tolerance in standard errors.
pub const MC_SIGMAS: f64 = 3.0;

/// Absolute slack for closed-form comparisons.
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedValue {
    pub estimate: f64,
    pub stderr: f64,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedGradient {
    /// Block of `∇_i f_μ(x)`.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub exact: Option<Vec<f64>>,
}

pub struct SmoothingOracle<'a> {
    objective: &'a dyn Objective,
    mu: f64,
    samples: usize,
    rng: RngStream,
}

impl<'a> SmoothingOracle<'a> {
    pub fn new(objective: &'a dyn Objective, mu: f64, samples: usize, rng: RngStream) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Config(format!("smoothing parameter must be positive, got {mu}")));
        }
        if samples < 2 {
            return Err(Error::Config("smoothing oracle needs at least 2 samples".into()));
        }
        Ok(Self { objective, mu, samples, rng })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `f_μ(x)` for smoothing along `agent`'s block.
    pub fn smoothed_value(&mut self, x: &BlockVector, agent: usize) -> Result<SmoothedValue> {
        self.objective.layout().check_same(x.layout())?;
        let mut stats = Welford::new(1);
        for _ in 0..self.samples {
            let u = sample_block_gaussian(x.layout(), agent, &mut self.rng)?;
            let mut p = x.clone();
            p.add_scaled(self.mu, &u)?;
            stats.push(&[self.objective.value(p.values())]);
        }
        Ok(SmoothedValue {
            estimate: stats.mean[0],
            stderr: stats.stderr()[0],
            exact: self.objective.smoothed_value_exact(x.values(), agent, self.mu),
        })
    }

    /// `∇_i f_μ(x)` restricted to `agent`'s block.
    ///
    /// Averages `(f(x + μu) − f(x))/μ · u`. Subtracting `f(x)` leaves the mean
    /// unchanged because `E[u] = 0`, and removes the `f(x)²/μ²` variance term.
    pub fn smoothed_gradient_block(&mut self, x: &BlockVector, agent: usize) -> Result<SmoothedGradient> {
        self.objective.layout().check_same(x.layout())?;
        let f0 = self.objective.value(x.values());
        let dim = x.layout().block_dim(agent);
        let mut stats = Welford::new(dim);
        let mut sample = vec![0.0; dim];
        for _ in 0..self.samples {
            let u = sample_block_gaussian(x.layout(), agent, &mut self.rng)?;
            let mut p = x.clone();
            p.add_scaled(self.mu, &u)?;
            let s = (self.objective.value(p.values()) - f0) / self.mu;
            for (o, v) in sample.iter_mut().zip(u.block_values()) {
                *o = s * v;
            }
            stats.push(&sample);
        }
        Ok(SmoothedGradient {
            estimate: stats.mean.clone(),
            stderr: stats.stderr(),
            exact: self.objective.smoothed_gradient_exact(x.values(), agent, self.mu),
        })
    }
}

/// Streaming mean and variance per coordinate.
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }

    pub fn stderr(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.variance().into_iter().map(|v| (v / n).sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingInequality {
    /// `|f_μ − f| ≤ μ²L₁n_i/2`
    Value,
    /// `‖∇_i f_μ − ∇_i f‖ ≤ (μ/2)L₁(n_i+3)^{3/2}`
    Gradient,
}

impl SmoothingInequality {
    pub fn describe(self) -> &'static str {
        match self {
            SmoothingInequality::Value => "|f_mu(x) - f(x)| <= mu^2 L1 n_i / 2",
            SmoothingInequality::Gradient => "||grad_i f_mu(x) - grad_i f(x)|| <= (mu/2) L1 (n_i+3)^(3/2)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub point: usize,
    pub agent: usize,
    pub inequality: SmoothingInequality,
    pub observed: f64,
    pub bound: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmoothingBoundReport {
    pub checks: usize,
    pub violations: Vec<BoundViolation>,
    /// Smallest `bound + tolerance − observed` over all checks.
    pub min_slack: f64,
    /// Largest `observed / bound`.
    pub max_ratio: f64,
}

impl SmoothingBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks both smoothing-error bounds at every point and every block.
///
/// Closed forms are used when the objective provides them (tolerance
/// `1e-12`); otherwise the Monte-Carlo oracle with `samples` draws and a
/// `3·stderr` tolerance.
pub fn check_smoothing_error_bounds(
    objective: &dyn Objective,
    points: &[BlockVector],
    mu: f64,
    l1: f64,
    samples: usize,
    rng: RngStream,
) -> Result<SmoothingBoundReport> {
    if !(l1.is_finite() && l1 > 0.0) {
        return Err(Error::Config(format!("L1 must be positive, got {l1}")));
    }
    let mut oracle = SmoothingOracle::new(objective, mu, samples, rng)?;
    let mut report = SmoothingBoundReport { min_slack: f64::INFINITY, ..Default::default() };
    let layout = objective.layout().clone();
    for (p, x) in points.iter().enumerate() {
        let fx = objective.value(x.values());
        let grad = objective.gradient(x.values());
        for agent in 0..layout.num_blocks() {
            let n_i = layout.block_dim(agent) as f64;

            let value_bound = 0.5 * mu * mu * l1 * n_i;
            let (observed, tol) = match objective.smoothed_value_exact(x.values(), agent, mu) {
                Some(exact) => ((exact - fx).abs(), EXACT_TOL * (1.0 + value_bound)),
                None => {
                    let v = oracle.smoothed_value(x, agent)?;
                    ((v.estimate - fx).abs(), MC_SIGMAS * v.stderr)
                }
            };
            report.record(p, agent, SmoothingInequality::Value, observed, value_bound, tol);

            let Some(grad) = grad.as_ref() else { continue };
            let true_block = &grad[layout.range(agent)];
            let grad_bound = 0.5 * mu * l1 * (n_i + 3.0).powf(1.5);
            let (observed, tol) = match objective.smoothed_gradient_exact(x.values(), agent, mu) {
                Some(exact) => (distance(&exact, true_block), EXACT_TOL * (1.0 + grad_bound)),
                None => {
                    let g = oracle.smoothed_gradient_block(x, agent)?;
                    let se = g.stderr.iter().map(|s| s * s).sum::<f64>().sqrt();
                    (distance(&g.estimate, true_block), MC_SIGMAS * se)
                }
            };
            report.record(p, agent, SmoothingInequality::Gradient, observed, grad_bound, tol);
        }
    }
    Ok(report)
}

impl SmoothingBoundReport {
    fn record(
        &mut self,
        point: usize,
        agent: usize,
        inequality: SmoothingInequality,
        observed: f64,
        bound: f64,
        tolerance: f64,
    ) {
        self.checks += 1;
        let slack = bound + tolerance - observed;
        self.min_slack = self.min_slack.min(slack);
        if bound > 0.0 {
            self.max_ratio = self.max_ratio.max(observed / bound);
        }
        if !(slack >= 0.0) {
            self.violations.push(BoundViolation { point, agent, inequality, observed, bound, tolerance });
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Parameters of the recursive sequence `V_k ≤ γ Σ_{m<k} β^m V_{k−1−m} + M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceBoundParams {
    pub gamma: f64,
    pub beta: f64,
    pub m_const: f64,
    pub v0: f64,
    pub horizon: u64,
}

impl SequenceBoundParams {
    pub fn new(gamma: f64, beta: f64, m_const: f64, v0: f64, horizon: u64) -> Result<Self> {
        let p = Self { gamma, beta, m_const, v0, horizon };
        p.validate()?;
        Ok(p)
    }

    /// Instantiation for accumulated second moments of the asynchronous
    /// residual estimator: `γ = 2n̄L₀²α²(T−1)/μ²`, `β = 1 − p_min`,
    /// `M = 4L₀²((4+n̄)² + n̄²)`.
    ///
    /// Rejects parameter sets with `γ + β ≥ 1`; for fixed `(α, μ)` this
    /// happens once `T` is large.
    pub fn for_second_moments(
        n_bar: u64,
        l0: f64,
        alpha: f64,
        mu: f64,
        p_min: f64,
        horizon: u64,
        v0: f64,
    ) -> Result<Self> {
        let n = n_bar as f64;
        let gamma = 2.0 * n * l0 * l0 * alpha * alpha * (horizon.saturating_sub(1)) as f64 / (mu * mu);
        let m_const = 4.0 * l0 * l0 * ((4.0 + n).powi(2) + n * n);
        Self::new(gamma, 1.0 - p_min, m_const, v0, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { gamma, beta, m_const, v0, .. } = *self;
        if !(gamma > 0.0 && (0.0..1.0).contains(&beta) && gamma + beta < 1.0) {
            return Err(Error::Domain(format!(
                "need gamma > 0, beta in [0,1), 0 < gamma + beta < 1; got gamma={gamma}, beta={beta}"
            )));
        }
        if !(m_const >= 0.0 && v0 >= 0.0) {
            return Err(Error::Domain(format!("need M >= 0 and V0 >= 0; got M={m_const}, V0={v0}")));
        }
        Ok(())
    }

    fn ratio(&self) -> f64 {
        self.gamma + self.beta
    }
}

/// Closed-form per-step bound `γ r^{k−1} V₀ + (1 − β − γ r^{k−1})/(1 − r) · M`, `r = γ + β`.
pub fn recursive_sequence_bound(params: &SequenceBoundParams, k: u64) -> Result<f64> {
    params.validate()?;
    if k == 0 {
        return Err(Error::Domain("per-step bound is stated for k >= 1".into()));
    }
    let r = params.ratio();
    let g = params.gamma * r.powi((k - 1) as i32);
    Ok(g * params.v0 + (1.0 - params.beta - g) / (1.0 - r) * params.m_const)
}

/// Closed-form bound on `Σ_{k<T} V_k` as published:
/// `(1−β)/(1−r)·V₀ + (T−1)(1−β)/(1−r)·M − γ/(1−r)²·M`.
///
/// This drops the `+γ r^{T−1} M/(1−r)²` term of the exact extremal sum, so
/// it can undercut the extremal sequence when `M > (1 − r) V₀`; see
/// [`extremal_sequence_sum`].
pub fn recursive_sequence_sum_bound(params: &SequenceBoundParams, horizon: u64) -> Result<f64> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::Domain("sum bound needs T >= 1".into()));
    }
    let r = params.ratio();
    let q = (1.0 - params.beta) / (1.0 - r);
    Ok(q * params.v0 + (horizon - 1) as f64 * q * params.m_const
        - params.gamma / (1.0 - r).powi(2) * params.m_const)
}

/// Closed form of `Σ_{k<T} V_k` for the extremal sequence.
pub fn extremal_sequence_sum(params: &SequenceBoundParams, horizon: u64) -> Result<f64> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::Domain("sum needs T >= 1".into()));
    }
    let r = params.ratio();
    let tail = 1.0 - r.powi((horizon - 1) as i32);
    let (g, b, m, v0) = (params.gamma, params.beta, params.m_const, params.v0);
    Ok(v0 + g * v0 * tail / (1.0 - r) + (horizon - 1) as f64 * (1.0 - b) * m / (1.0 - r)
        - g * m * tail / (1.0 - r).powi(2))
}

/// The sequence attaining the recursion with equality, `V_0 … V_{T−1}`,
/// computed directly from the defining sum (quadratic time, no closed form).
pub fn extremal_sequence(params: &SequenceBoundParams, horizon: u64) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::with_capacity(horizon as usize);
    if horizon == 0 {
        return v;
    }
    v.push(params.v0);
    for k in 1..horizon as usize {
        let mut acc = 0.0;
        let mut w = 1.0;
        for m in 0..k {
            acc += w * v[k - 1 - m];
            w *= params.beta;
        }
        v.push(params.gamma * acc + params.m_const);
    }
    v
}

/// Per-agent running record of `‖G‖²`.
#[derive(Debug, Clone, Default)]
pub struct SecondMomentTracker {
    values: Vec<(usize, f64)>,
    per_agent_sum: Vec<f64>,
    per_agent_count: Vec<u64>,
}

impl SecondMomentTracker {
    pub fn new(num_agents: usize) -> Self {
        Self { values: Vec::new(), per_agent_sum: vec![0.0; num_agents], per_agent_count: vec![0; num_agents] }
    }

    pub fn track(&mut self, estimate: &GradientEstimate) {
        self.push(estimate.agent(), estimate.norm_sq());
    }

    pub fn push(&mut self, agent: usize, norm_sq: f64) {
        if agent >= self.per_agent_sum.len() {
            self.per_agent_sum.resize(agent + 1, 0.0);
            self.per_agent_count.resize(agent + 1, 0);
        }
        self.values.push((agent, norm_sq));
        self.per_agent_sum[agent] += norm_sq;
        self.per_agent_count[agent] += 1;
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| v.1)
    }

    pub fn sum(&self) -> f64 {
        self.values().sum()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.sum() / self.values.len() as f64)
    }

    pub fn agent_mean(&self, agent: usize) -> Option<f64> {
        let c = *self.per_agent_count.get(agent)?;
        (c > 0).then(|| self.per_agent_sum[agent] / c as f64)
    }

    /// Means over consecutive windows of `window` estimates; the last window may be short.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        self.values
            .chunks(window)
            .map(|c| c.iter().map(|v| v.1).sum::<f64>() / c.len() as f64)
            .collect()
    }
}
