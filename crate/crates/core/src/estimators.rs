//! Zeroth-order gradient estimators.
//!
//! The centralized forms perturb the full decision vector. The asynchronous
//! forms perturb one agent's block and keep per-agent memory in
//! [`AgentState`].

use crate::block::{sample_block_gaussian, BlockVector, PerturbationDirection};
use crate::error::{Error, Result};
use crate::objectives::ObjectiveHandle;
use crate::rng::RngStream;

/// Estimates whose norm exceeds this abort the run as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("smoothing parameter must be positive, got {mu}")))
    }
}

fn full_gaussian(x: &BlockVector, rng: &mut RngStream) -> BlockVector {
    BlockVector::standard_gaussian(x.layout(), rng)
}

fn shifted(x: &BlockVector, scale: f64, u: &BlockVector) -> BlockVector {
    let mut y = x.clone();
    for (a, b) in y.values_mut().iter_mut().zip(u.values()) {
        *a += scale * b;
    }
    y
}

fn scaled(u: BlockVector, s: f64) -> BlockVector {
    let mut u = u;
    u.values_mut().iter_mut().for_each(|v| *v *= s);
    u
}

/// `f(x + μu)/μ · u`, one query.
pub fn one_point_centralized(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    mu: f64,
    rng: &mut RngStream,
) -> Result<BlockVector> {
    check_mu(mu)?;
    let u = full_gaussian(x, rng);
    let fp = obj.evaluate(&shifted(x, mu, &u))?;
    Ok(scaled(u, fp / mu))
}

/// `(f(x + μu) − f(x))/μ · u`, two queries.
pub fn two_point_unbiased_centralized(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    mu: f64,
    rng: &mut RngStream,
) -> Result<BlockVector> {
    check_mu(mu)?;
    let u = full_gaussian(x, rng);
    let fp = obj.evaluate(&shifted(x, mu, &u))?;
    let f0 = obj.evaluate(x)?;
    Ok(scaled(u, (fp - f0) / mu))
}

/// `(f(x + μu) − f(x − μu))/(2μ) · u`, two queries.
pub fn two_point_biased_centralized(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    mu: f64,
    rng: &mut RngStream,
) -> Result<BlockVector> {
    check_mu(mu)?;
    let u = full_gaussian(x, rng);
    let fp = obj.evaluate(&shifted(x, mu, &u))?;
    let fm = obj.evaluate(&shifted(x, -mu, &u))?;
    Ok(scaled(u, (fp - fm) / (2.0 * mu)))
}

/// Result of one centralized residual-feedback call.
#[derive(Debug, Clone)]
pub struct ResidualStep {
    /// `None` on the bootstrap call (no previous value yet).
    pub estimate: Option<BlockVector>,
    /// The fresh query value, to be passed back as `prev_value` next time.
    pub value: f64,
}

/// `(f(x + μu) − prev)/μ · u`, one query.
pub fn residual_centralized(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    prev_value: Option<f64>,
    mu: f64,
    rng: &mut RngStream,
) -> Result<ResidualStep> {
    check_mu(mu)?;
    let u = full_gaussian(x, rng);
    let value = obj.evaluate(&shifted(x, mu, &u))?;
    let estimate = prev_value.map(|prev| scaled(u, (value - prev) / mu));
    Ok(ResidualStep { estimate, value })
}

/// Per-agent memory for the asynchronous estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    agent: usize,
    alpha: f64,
    mu: f64,
    last_value: Option<f64>,
    last_direction: Option<PerturbationDirection>,
    last_update_iter: Option<u64>,
    bootstrap_done: bool,
}

impl AgentState {
    pub fn new(agent: usize, alpha: f64, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {alpha}")));
        }
        Ok(Self {
            agent,
            alpha,
            mu,
            last_value: None,
            last_direction: None,
            last_update_iter: None,
            bootstrap_done: false,
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn last_value(&self) -> Option<f64> {
        self.last_value
    }

    pub fn last_direction(&self) -> Option<&PerturbationDirection> {
        self.last_direction.as_ref()
    }

    pub fn last_update_iter(&self) -> Option<u64> {
        self.last_update_iter
    }

    pub fn bootstrap_done(&self) -> bool {
        self.bootstrap_done
    }

    /// Staleness `M` of the stored query relative to iteration `k`.
    pub fn staleness(&self, k: u64) -> Option<u64> {
        self.last_update_iter.map(|t| k - t)
    }

    fn remember(&mut self, value: f64, direction: Option<PerturbationDirection>, iteration: u64) -> Result<()> {
        if let Some(prev) = self.last_update_iter {
            if iteration <= prev {
                return Err(Error::Config(format!(
                    "agent {} activated at iteration {iteration} after {prev}",
                    self.agent
                )));
            }
        }
        self.last_value = Some(value);
        self.last_direction = direction;
        self.last_update_iter = Some(iteration);
        Ok(())
    }
}

/// Block-sparse estimate `scale · u`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub direction: PerturbationDirection,
    pub scale: f64,
}

impl GradientEstimate {
    pub fn agent(&self) -> usize {
        self.direction.agent()
    }

    pub fn block(&self) -> Vec<f64> {
        self.direction.block_values().iter().map(|v| v * self.scale).collect()
    }

    pub fn as_full(&self) -> BlockVector {
        scaled(self.direction.as_full_vector(), self.scale)
    }

    pub fn norm_sq(&self) -> f64 {
        self.scale * self.scale * self.direction.norm_sq()
    }
}

/// Outcome of one asynchronous activation.
#[derive(Debug, Clone, PartialEq)]
pub enum AsyncStep {
    /// A query was stored as the baseline; no update this activation.
    Bootstrap,
    Estimate(GradientEstimate),
}

fn guard(scale: f64, u: &PerturbationDirection, iteration: u64) -> Result<GradientEstimate> {
    let est = GradientEstimate { direction: u.clone(), scale };
    let norm = est.norm_sq().sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_GUARD {
        // the driver fills in the trial id
        return Err(Error::Divergence { trial: 0, iteration, norm });
    }
    Ok(est)
}

/// Asynchronous residual feedback for the agent owning `state`.
///
/// Queries `f(x_k + μ_i u_k)` once and differences it against the value this
/// agent stored at its previous activation, which may have been taken at a
/// different joint point if other agents moved in between. The first
/// activation only stores its query.
pub fn residual_async(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    state: &mut AgentState,
    iteration: u64,
    rng: &mut RngStream,
) -> Result<AsyncStep> {
    let u = sample_block_gaussian(x.layout(), state.agent, rng)?;
    let mut probe = x.clone();
    probe.add_scaled(state.mu, &u)?;
    let value = obj.evaluate(&probe)?;
    let step = match state.last_value {
        Some(prev) if state.bootstrap_done => {
            AsyncStep::Estimate(guard((value - prev) / state.mu, &u, iteration)?)
        }
        _ => AsyncStep::Bootstrap,
    };
    state.remember(value, Some(u), iteration)?;
    state.bootstrap_done = true;
    Ok(step)
}

/// Where the asynchronous two-point estimator takes its unperturbed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TwoPointBaseline {
    /// Query `f(x_k)` in the same activation: 2 queries, an estimate every time.
    #[default]
    Fresh,
    /// Alternate: one activation queries and stores `f(x_k)`, the next queries
    /// `f(x_k + μu)` against that stored, possibly stale, value. 1 query per
    /// activation, one estimate every second activation.
    Stored,
}

/// Asynchronous two-point estimate `(f(x_k + μ_i u_k) − f(x_{k−M}))/μ_i · u_k`.
pub fn two_point_async(
    obj: &mut ObjectiveHandle,
    x: &BlockVector,
    state: &mut AgentState,
    iteration: u64,
    baseline: TwoPointBaseline,
    rng: &mut RngStream,
) -> Result<AsyncStep> {
    match baseline {
        TwoPointBaseline::Fresh => {
            let u = sample_block_gaussian(x.layout(), state.agent, rng)?;
            let mut probe = x.clone();
            probe.add_scaled(state.mu, &u)?;
            let fp = obj.evaluate(&probe)?;
            let f0 = obj.evaluate(x)?;
            let est = guard((fp - f0) / state.mu, &u, iteration)?;
            state.remember(f0, None, iteration)?;
            state.bootstrap_done = true;
            Ok(AsyncStep::Estimate(est))
        }
        TwoPointBaseline::Stored => match state.last_value.take() {
            Some(f0) => {
                let u = sample_block_gaussian(x.layout(), state.agent, rng)?;
                let mut probe = x.clone();
                probe.add_scaled(state.mu, &u)?;
                let fp = obj.evaluate(&probe)?;
                let est = guard((fp - f0) / state.mu, &u, iteration)?;
                // baseline consumed; the next activation re-queries it
                state.last_update_iter = Some(iteration);
                state.last_direction = Some(u);
                Ok(AsyncStep::Estimate(est))
            }
            None => {
                let f0 = obj.evaluate(x)?;
                state.remember(f0, None, iteration)?;
                state.bootstrap_done = true;
                Ok(AsyncStep::Bootstrap)
            }
        },
    }
}
