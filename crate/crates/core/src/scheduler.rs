//! Random agent activation and the asynchronous optimization driver.
//!
//! At every global step exactly one agent is activated. It queries the
//! objective through its estimator and, when the estimator returns an
//! estimate, moves its own block `x^i ← x^i − α_i G`. All other blocks stay
//! fixed for that step.

use crate::block::{sample_categorical, validate_probabilities, BlockVector};
use crate::error::{Error, Result};
use crate::estimators::{residual_async, two_point_async, AgentState, AsyncStep, GradientEstimate, TwoPointBaseline};
use crate::objectives::ObjectiveHandle;
use crate::rng::{RngStream, StreamRole};

#[derive(Debug, Clone, PartialEq)]
pub enum ActivationModel {
    /// One agent drawn from a fixed distribution per step.
    Categorical { probs: Vec<f64> },
    /// Independent Poisson clocks; the agent whose clock rings next is active.
    ExponentialClocks { rates: Vec<f64> },
}

impl ActivationModel {
    pub fn uniform(num_agents: usize) -> Self {
        ActivationModel::Categorical { probs: vec![1.0 / num_agents as f64; num_agents] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActivationModel::Categorical { probs } => {
                validate_probabilities(probs)?;
                if probs.iter().any(|&p| p <= 0.0) {
                    return Err(Error::Config("every activation probability must be positive".into()));
                }
                Ok(())
            }
            ActivationModel::ExponentialClocks { rates } => {
                if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(Error::Config("clock rates must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            ActivationModel::Categorical { probs } => probs.len(),
            ActivationModel::ExponentialClocks { rates } => rates.len(),
        }
    }

    /// Per-step activation probabilities (`λ_i / Σλ` for clocks).
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            ActivationModel::Categorical { probs } => probs.clone(),
            ActivationModel::ExponentialClocks { rates } => {
                let total: f64 = rates.iter().sum();
                rates.iter().map(|r| r / total).collect()
            }
        }
    }

    pub fn p_min(&self) -> f64 {
        self.probabilities().into_iter().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub agent: usize,
    /// Continuous event time, clocks only.
    pub time: Option<f64>,
}

/// Stateful sampler over an [`ActivationModel`].
#[derive(Debug, Clone)]
pub struct Activator {
    model: ActivationModel,
    next_event: Vec<f64>,
}

impl Activator {
    pub fn new(model: ActivationModel, rng: &mut RngStream) -> Result<Self> {
        model.validate()?;
        let next_event = match &model {
            ActivationModel::Categorical { .. } => Vec::new(),
            ActivationModel::ExponentialClocks { rates } => {
                rates.iter().map(|&r| rng.exponential(r)).collect()
            }
        };
        Ok(Self { model, next_event })
    }

    pub fn model(&self) -> &ActivationModel {
        &self.model
    }

    pub fn next_activation(&mut self, rng: &mut RngStream) -> Activation {
        match &self.model {
            ActivationModel::Categorical { probs } => Activation {
                agent: sample_categorical(probs, rng).expect("validated at construction"),
                time: None,
            },
            ActivationModel::ExponentialClocks { rates } => {
                let (agent, &time) = self
                    .next_event
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("at least one agent");
                // memoryless: only the firing clock needs a fresh waiting time
                self.next_event[agent] = time + rng.exponential(rates[agent]);
                Activation { agent, time: Some(time) }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Iterations(u64),
    Queries(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    ResidualAsync,
    TwoPointAsync,
    /// Two-point with a stored, possibly stale, unperturbed baseline.
    TwoPointAsyncStored,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::ResidualAsync => "residual-async",
            EstimatorKind::TwoPointAsync => "two-point-async",
            EstimatorKind::TwoPointAsyncStored => "two-point-async-stored",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "residual-async" => Ok(EstimatorKind::ResidualAsync),
            "two-point-async" => Ok(EstimatorKind::TwoPointAsync),
            "two-point-async-stored" => Ok(EstimatorKind::TwoPointAsyncStored),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }

    /// Queries consumed by one activation.
    pub fn queries_per_activation(self) -> u64 {
        match self {
            EstimatorKind::TwoPointAsync => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateScheduleVariant {
    /// `α = √p_min / T^{2/3}`, `μ = 2 L0 √n̄ / T^{1/6}` (the default).
    SmoothingScaled,
    /// `α = √p_min / (√n̄ T^{2/3})`, `μ = 2 L0 / T^{1/6}`.
    StepScaled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Manual { alpha: f64, mu: f64 },
    /// Per-agent step sizes and smoothing parameters.
    PerAgent { alphas: Vec<f64>, mus: Vec<f64> },
    Rate(RateScheduleVariant),
}

/// Step size and smoothing parameter giving the `O(n̄³ T^{-1/3})` stationarity rate.
pub fn rate_schedule(l0: f64, n_bar: u64, p_min: f64, horizon: u64) -> Result<(f64, f64)> {
    rate_schedule_variant(l0, n_bar, p_min, horizon, RateScheduleVariant::SmoothingScaled)
}

pub fn rate_schedule_variant(
    l0: f64,
    n_bar: u64,
    p_min: f64,
    horizon: u64,
    variant: RateScheduleVariant,
) -> Result<(f64, f64)> {
    if !(l0.is_finite() && l0 > 0.0) || n_bar == 0 || !(p_min > 0.0 && p_min <= 1.0) || horizon == 0 {
        return Err(Error::Config(format!(
            "schedule needs positive L0, n̄, p_min ∈ (0,1], T; got L0={l0}, n̄={n_bar}, p_min={p_min}, T={horizon}"
        )));
    }
    let t = horizon as f64;
    let n = n_bar as f64;
    let (alpha, mu) = match variant {
        RateScheduleVariant::SmoothingScaled => (p_min.sqrt() / t.powf(2.0 / 3.0), 2.0 * l0 * n.sqrt() / t.powf(1.0 / 6.0)),
        RateScheduleVariant::StepScaled => (p_min.sqrt() / (n.sqrt() * t.powf(2.0 / 3.0)), 2.0 * l0 / t.powf(1.0 / 6.0)),
    };
    Ok((alpha, mu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub budget: Budget,
    pub estimator: EstimatorKind,
    pub schedule: Schedule,
    pub seed: u64,
    pub trial_id: u64,
    /// Recorder cadence in queries.
    pub record_every: u64,
    /// Attach `‖∇f(x)‖²` from the analytic gradient to each record.
    pub track_grad_norm: bool,
    /// Keep `(time, agent)` for every clock event.
    pub keep_wall_events: bool,
}

impl RunConfig {
    pub fn new(budget: Budget, estimator: EstimatorKind, schedule: Schedule, seed: u64) -> Self {
        Self {
            budget,
            estimator,
            schedule,
            seed,
            trial_id: 0,
            record_every: 1,
            track_grad_norm: false,
            keep_wall_events: false,
        }
    }

    /// Iteration horizon `T` implied by the budget.
    pub fn horizon(&self) -> u64 {
        match self.budget {
            Budget::Iterations(t) => t,
            Budget::Queries(q) => q / self.estimator.queries_per_activation(),
        }
    }

    /// Resolves per-agent `(α_i, μ_i)`.
    pub fn resolve_parameters(&self, obj: &ObjectiveHandle, model: &ActivationModel) -> Result<Vec<(f64, f64)>> {
        let n = obj.layout().num_blocks();
        match &self.schedule {
            Schedule::Manual { alpha, mu } => Ok(vec![(*alpha, *mu); n]),
            Schedule::PerAgent { alphas, mus } => {
                if alphas.len() != n || mus.len() != n {
                    return Err(Error::Config(format!("per-agent schedule needs {n} step sizes and smoothing parameters")));
                }
                Ok(alphas.iter().copied().zip(mus.iter().copied()).collect())
            }
            Schedule::Rate(variant) => {
                let l0 = obj
                    .metadata()
                    .lipschitz_l0
                    .ok_or_else(|| Error::Config("rate schedule requires L0 metadata".into()))?;
                let n_bar = obj
                    .layout()
                    .common_block_dim()
                    .ok_or_else(|| Error::Config("rate schedule requires equal block sizes".into()))?;
                let (a, m) = rate_schedule_variant(l0, n_bar as u64, model.p_min(), self.horizon(), *variant)?;
                Ok(vec![(a, m); n])
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationClock {
    /// Activations so far.
    pub iteration: u64,
    pub queries: u64,
    pub updates: u64,
    pub bootstraps: u64,
    pub wall_events: Option<Vec<(f64, usize)>>,
}

/// One recorder callback.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub trial_id: u64,
    pub iteration: u64,
    pub queries: u64,
    pub agent: usize,
    pub loss: f64,
    pub grad_norm_sq: Option<f64>,
}

pub trait Recorder {
    fn record(&mut self, record: &Record);
}

impl Recorder for Vec<Record> {
    fn record(&mut self, record: &Record) {
        self.push(record.clone());
    }
}

/// Discards everything.
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _record: &Record) {}
}

/// What one activation did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub activation: Activation,
    pub iteration: u64,
    pub queries_used: u64,
    pub estimate: Option<GradientEstimate>,
}

/// Step-wise asynchronous driver. [`run_async`] loops it to the budget.
pub struct AsyncDriver {
    obj: ObjectiveHandle,
    config: RunConfig,
    activator: Activator,
    scheduler_rng: RngStream,
    agent_rngs: Vec<RngStream>,
    states: Vec<AgentState>,
    x: BlockVector,
    clock: SimulationClock,
}

impl AsyncDriver {
    pub fn new(obj: ObjectiveHandle, model: ActivationModel, config: RunConfig, x0: BlockVector) -> Result<Self> {
        obj.layout().check_same(x0.layout())?;
        model.validate()?;
        let n = obj.layout().num_blocks();
        if model.num_agents() != n {
            return Err(Error::Config(format!(
                "activation model has {} agents but the objective has {n} blocks",
                model.num_agents()
            )));
        }
        if config.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let params = config.resolve_parameters(&obj, &model)?;
        let states = params
            .iter()
            .enumerate()
            .map(|(i, &(a, m))| AgentState::new(i, a, m))
            .collect::<Result<Vec<_>>>()?;
        let mut scheduler_rng = RngStream::for_role(config.seed, config.trial_id, StreamRole::Scheduler);
        let activator = Activator::new(model, &mut scheduler_rng)?;
        let agent_rngs = (0..n)
            .map(|i| RngStream::for_role(config.seed, config.trial_id, StreamRole::Agent(i)))
            .collect();
        let clock = SimulationClock {
            wall_events: config.keep_wall_events.then(Vec::new),
            ..Default::default()
        };
        Ok(Self { obj, config, activator, scheduler_rng, agent_rngs, states, x: x0, clock })
    }

    pub fn x(&self) -> &BlockVector {
        &self.x
    }

    /// Replaces the decision vector, e.g. to freeze it at a measurement point.
    pub fn set_x(&mut self, x: BlockVector) -> Result<()> {
        self.obj.layout().check_same(x.layout())?;
        self.x = x;
        Ok(())
    }

    pub fn clock(&self) -> &SimulationClock {
        &self.clock
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn objective(&self) -> &ObjectiveHandle {
        &self.obj
    }

    pub fn objective_mut(&mut self) -> &mut ObjectiveHandle {
        &mut self.obj
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Whether another activation fits in the budget.
    pub fn has_budget(&self) -> bool {
        match self.config.budget {
            Budget::Iterations(t) => self.clock.iteration < t,
            Budget::Queries(q) => self.clock.queries + self.config.estimator.queries_per_activation() <= q,
        }
    }

    /// One activation, ignoring the budget.
    pub fn step(&mut self) -> Result<StepReport> {
        let activation = self.activator.next_activation(&mut self.scheduler_rng);
        self.step_agent(activation)
    }

    /// Activates a chosen agent, bypassing the activation model.
    pub fn step_agent(&mut self, activation: Activation) -> Result<StepReport> {
        let agent = activation.agent;
        self.obj.layout().check_agent(agent)?;
        let k = self.clock.iteration;
        let before = self.obj.query_count();
        let state = &mut self.states[agent];
        let rng = &mut self.agent_rngs[agent];
        let outcome = match self.config.estimator {
            EstimatorKind::ResidualAsync => residual_async(&mut self.obj, &self.x, state, k, rng),
            EstimatorKind::TwoPointAsync => {
                two_point_async(&mut self.obj, &self.x, state, k, TwoPointBaseline::Fresh, rng)
            }
            EstimatorKind::TwoPointAsyncStored => {
                two_point_async(&mut self.obj, &self.x, state, k, TwoPointBaseline::Stored, rng)
            }
        };
        let outcome = outcome.map_err(|e| match e {
            Error::Divergence { iteration, norm, .. } => {
                Error::Divergence { trial: self.config.trial_id, iteration, norm }
            }
            other => other,
        })?;
        let used = self.obj.query_count() - before;
        self.clock.iteration += 1;
        self.clock.queries += used;
        if let (Some(events), Some(t)) = (self.clock.wall_events.as_mut(), activation.time) {
            events.push((t, agent));
        }
        let estimate = match outcome {
            AsyncStep::Bootstrap => {
                self.clock.bootstraps += 1;
                None
            }
            AsyncStep::Estimate(est) => {
                let alpha = self.states[agent].alpha();
                self.x.add_scaled(-alpha * est.scale, &est.direction)?;
                self.clock.updates += 1;
                Some(est)
            }
        };
        Ok(StepReport { activation, iteration: k, queries_used: used, estimate })
    }

    fn make_record(&self, agent: usize, queries: u64, x: &BlockVector) -> Record {
        let grad_norm_sq = if self.config.track_grad_norm {
            self.obj.objective().gradient(x.values()).map(|g| g.iter().map(|v| v * v).sum())
        } else {
            None
        };
        Record {
            trial_id: self.config.trial_id,
            iteration: self.clock.iteration,
            queries,
            agent,
            loss: self.obj.peek(x),
            grad_norm_sq,
        }
    }

    /// Runs until the budget is exhausted, recording at every multiple of
    /// `record_every` queries.
    ///
    /// A grid point hit by the first query of a two-query activation is
    /// recorded with the pre-update iterate.
    pub fn run(&mut self, recorder: &mut dyn Recorder) -> Result<()> {
        let every = self.config.record_every;
        while self.has_budget() {
            let x_before = self.x.clone();
            let q_before = self.clock.queries;
            let report = self.step()?;
            let q_after = self.clock.queries;
            let mut grid = (q_before / every + 1) * every;
            while grid <= q_after {
                let rec = if grid < q_after {
                    self.make_record(report.activation.agent, grid, &x_before)
                } else {
                    self.make_record(report.activation.agent, grid, &self.x)
                };
                recorder.record(&rec);
                grid += every;
            }
        }
        Ok(())
    }

    pub fn into_parts(self) -> (BlockVector, SimulationClock, ObjectiveHandle) {
        (self.x, self.clock, self.obj)
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub x: BlockVector,
    pub clock: SimulationClock,
    pub objective: ObjectiveHandle,
}

/// Asynchronous zeroth-order optimization from `x0` until the budget runs out.
pub fn run_async(
    obj: ObjectiveHandle,
    model: ActivationModel,
    config: RunConfig,
    x0: BlockVector,
    recorder: &mut dyn Recorder,
) -> Result<RunOutcome> {
    let mut driver = AsyncDriver::new(obj, model, config, x0)?;
    driver.run(recorder)?;
    let (x, clock, objective) = driver.into_parts();
    Ok(RunOutcome { x, clock, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::BlockLayout;
    use crate::objectives::{make_benchmark, Objective, QuadraticObjective};
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    fn scalar_quadratic() -> ObjectiveHandle {
        let l = BlockLayout::new(vec![1]).unwrap();
        ObjectiveHandle::new(Arc::new(
            QuadraticObjective::new(l, DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap(),
        ))
    }

    fn frequencies(model: ActivationModel, events: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut act = Activator::new(model.clone(), &mut rng).unwrap();
        let mut counts = vec![0usize; model.num_agents()];
        let mut last_time = 0.0;
        for _ in 0..events {
            let a = act.next_activation(&mut rng);
            if let Some(t) = a.time {
                assert!(t >= last_time);
                last_time = t;
            }
            counts[a.agent] += 1;
        }
        counts.into_iter().map(|c| c as f64 / events as f64).collect()
    }

    #[test]
    fn clocks_equal_rates() {
        let f = frequencies(ActivationModel::ExponentialClocks { rates: vec![1.0, 1.0] }, 1_000_000, 1);
        assert!((f[0] - 0.5).abs() < 0.0015, "{f:?}");
    }

    #[test]
    fn clocks_skewed_rates() {
        let f = frequencies(ActivationModel::ExponentialClocks { rates: vec![3.0, 1.0] }, 1_000_000, 2);
        assert!((f[0] - 0.75).abs() < 0.0013, "{f:?}");
    }

    #[test]
    fn degenerate_categorical() {
        let f = frequencies(ActivationModel::Categorical { probs: vec![1.0] }, 1000, 3);
        assert_eq!(f, vec![1.0]);
    }

    #[test]
    fn model_validation() {
        assert!(ActivationModel::Categorical { probs: vec![1.0, 0.0] }.validate().is_err());
        assert!(ActivationModel::ExponentialClocks { rates: vec![1.0, -1.0] }.validate().is_err());
        let m = ActivationModel::ExponentialClocks { rates: vec![1.0, 3.0] };
        assert_eq!(m.probabilities(), vec![0.25, 0.75]);
        assert_eq!(m.p_min(), 0.25);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(rate_schedule(1.0, 1, 1.0, 1).unwrap(), (1.0, 2.0));
        let (a, m) = rate_schedule(2.0, 4, 0.25, 1_000_000).unwrap();
        assert!((a - 5e-5).abs() < 1e-18, "{a}");
        assert!((m - 0.8).abs() < 1e-14, "{m}");
        let (a8, m8) = rate_schedule(2.0, 4, 0.25, 8_000_000).unwrap();
        assert!((a / a8 - 4.0).abs() < 1e-12);
        assert!((m / m8 - 8f64.powf(1.0 / 6.0)).abs() < 1e-12);
        assert!(rate_schedule(0.0, 1, 1.0, 1).is_err());
        assert!(rate_schedule(1.0, 0, 1.0, 1).is_err());
        let (ap, mp) = rate_schedule_variant(2.0, 4, 0.25, 1_000_000, RateScheduleVariant::StepScaled).unwrap();
        assert!((ap - 2.5e-5).abs() < 1e-18 && (mp - 0.4).abs() < 1e-14);
    }

    #[test]
    fn bootstrap_only_run_leaves_x_unchanged() {
        let cfg = RunConfig::new(
            Budget::Queries(1),
            EstimatorKind::ResidualAsync,
            Schedule::Manual { alpha: 0.1, mu: 1e-3 },
            5,
        );
        let x0 = BlockVector::from_values(&BlockLayout::new(vec![1]).unwrap(), vec![1.0]).unwrap();
        let out = run_async(scalar_quadratic(), ActivationModel::uniform(1), cfg, x0.clone(), &mut NullRecorder)
            .unwrap();
        assert_eq!(out.x, x0);
        assert_eq!(out.clock.bootstraps, 1);
        assert_eq!(out.objective.query_count(), 1);
    }

    #[test]
    fn updates_start_only_after_an_agent_repeats() {
        let l = BlockLayout::uniform(4, 2).unwrap();
        let mut rng = RngStream::new(6, 0);
        let obj = ObjectiveHandle::new(Arc::new(QuadraticObjective::random(l.clone(), &mut rng).unwrap()));
        let x0 = BlockVector::standard_gaussian(&l, &mut rng);
        let cfg = RunConfig::new(
            Budget::Queries(4),
            EstimatorKind::ResidualAsync,
            Schedule::Manual { alpha: 0.1, mu: 0.1 },
            6,
        );
        let mut d = AsyncDriver::new(obj, ActivationModel::uniform(4), cfg, x0.clone()).unwrap();
        let mut seen = [false; 4];
        while d.has_budget() {
            let r = d.step().unwrap();
            let repeat = seen[r.activation.agent];
            seen[r.activation.agent] = true;
            assert_eq!(r.estimate.is_some(), repeat);
        }
        assert_eq!(d.clock().bootstraps + d.clock().updates, 4);
    }

    fn scalar_run(alpha: f64, mu: f64, seed: u64) -> Result<RunOutcome> {
        let cfg = RunConfig::new(Budget::Iterations(2000), EstimatorKind::ResidualAsync, Schedule::Manual { alpha, mu }, seed);
        let x0 = BlockVector::from_values(&BlockLayout::new(vec![1]).unwrap(), vec![1.0]).unwrap();
        run_async(scalar_quadratic(), ActivationModel::uniform(1), cfg, x0, &mut NullRecorder)
    }

    #[test]
    fn scalar_contraction() {
        let ok = (0..10)
            .filter(|&seed| scalar_run(0.05, 0.1, seed).unwrap().x.values()[0].abs() < 0.2)
            .count();
        assert!(ok >= 9, "{ok}/10 seeds contracted");
    }

    #[test]
    fn tiny_smoothing_with_large_step_trips_the_guard() {
        // consecutive residuals differ by about α|x|/μ times the previous estimate
        let diverged = (0..10)
            .filter(|&seed| matches!(scalar_run(0.1, 1e-3, seed), Err(Error::Divergence { .. })))
            .count();
        assert_eq!(diverged, 10);
    }

    #[test]
    fn single_block_mutation_and_exact_accounting() {
        for kind in [EstimatorKind::ResidualAsync, EstimatorKind::TwoPointAsync, EstimatorKind::TwoPointAsyncStored] {
            let bench = make_benchmark(5, 20, 10, &mut RngStream::new(1, 2)).unwrap();
            let l = bench.layout().clone();
            let obj = ObjectiveHandle::new(Arc::new(bench));
            let x0 = BlockVector::standard_gaussian(&l, &mut RngStream::new(1, 3));
            let cfg = RunConfig::new(Budget::Iterations(500), kind, Schedule::Manual { alpha: 0.5, mu: 0.1 }, 1);
            let mut d = AsyncDriver::new(obj, ActivationModel::uniform(5), cfg, x0).unwrap();
            while d.has_budget() {
                let before = d.x().clone();
                let r = d.step().unwrap();
                assert_eq!(r.queries_used, kind.queries_per_activation());
                for b in 0..5 {
                    if b != r.activation.agent {
                        assert_eq!(before.block(b), d.x().block(b));
                    }
                }
            }
            assert_eq!(d.clock().queries, 500 * kind.queries_per_activation());
            assert_eq!(d.objective().query_count(), d.clock().queries);
        }
    }

    #[test]
    fn benchmark_trace_accounting() {
        let bench = make_benchmark(5, 20, 10, &mut RngStream::new(3, 2)).unwrap();
        let l = bench.layout().clone();
        let x0 = BlockVector::standard_gaussian(&l, &mut RngStream::new(3, 3));
        for (kind, every) in [(EstimatorKind::ResidualAsync, 7), (EstimatorKind::TwoPointAsync, 7), (EstimatorKind::TwoPointAsync, 1)] {
            let mut cfg = RunConfig::new(Budget::Queries(10_000), kind, Schedule::Manual { alpha: 0.5, mu: 0.1 }, 3);
            cfg.record_every = every;
            let mut rows: Vec<Record> = Vec::new();
            let out = run_async(
                ObjectiveHandle::new(Arc::new(bench.clone())),
                ActivationModel::uniform(5),
                cfg,
                x0.clone(),
                &mut rows,
            )
            .unwrap();
            assert_eq!(out.objective.query_count(), 10_000);
            assert_eq!(rows.len() as u64, 10_000 / every);
            assert!(rows.windows(2).all(|w| w[0].queries < w[1].queries));
            assert!(rows.iter().all(|r| r.queries % every == 0));
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let bench = make_benchmark(3, 5, 4, &mut RngStream::new(4, 2)).unwrap();
            let l = bench.layout().clone();
            let x0 = BlockVector::standard_gaussian(&l, &mut RngStream::new(4, 3));
            let mut cfg = RunConfig::new(Budget::Queries(300), EstimatorKind::ResidualAsync, Schedule::Manual { alpha: 0.5, mu: 0.1 }, 4);
            cfg.record_every = 10;
            cfg.keep_wall_events = true;
            let mut rows: Vec<Record> = Vec::new();
            let out = run_async(
                ObjectiveHandle::new(Arc::new(bench)),
                ActivationModel::ExponentialClocks { rates: vec![1.0, 2.0, 0.5] },
                cfg,
                x0,
                &mut rows,
            )
            .unwrap();
            (rows, out.x, out.clock)
        };
        let (r1, x1, c1) = run();
        let (r2, x2, c2) = run();
        assert_eq!(r1, r2);
        assert_eq!(x1, x2);
        assert_eq!(c1, c2);
        assert_eq!(c1.wall_events.unwrap().len(), 300);
    }

    #[test]
    fn rate_schedule_needs_metadata() {
        let bench = make_benchmark(2, 3, 2, &mut RngStream::new(4, 2)).unwrap();
        let l = bench.layout().clone();
        let cfg = RunConfig::new(Budget::Iterations(10), EstimatorKind::ResidualAsync, Schedule::Rate(RateScheduleVariant::SmoothingScaled), 0);
        let r = AsyncDriver::new(ObjectiveHandle::new(Arc::new(bench)), ActivationModel::uniform(2), cfg, BlockVector::zeros(&l));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn divergence_carries_trial_id() {
        let l = BlockLayout::new(vec![1]).unwrap();
        let q = QuadraticObjective::new(l.clone(), DMatrix::from_element(1, 1, 1.0), DVector::zeros(1), 0.0).unwrap();
        let mut cfg = RunConfig::new(Budget::Iterations(10_000), EstimatorKind::ResidualAsync, Schedule::Manual { alpha: 50.0, mu: 0.1 }, 1);
        cfg.trial_id = 9;
        let x0 = BlockVector::from_values(&l, vec![1.0]).unwrap();
        let mut rows: Vec<Record> = Vec::new();
        let r = run_async(ObjectiveHandle::new(Arc::new(q)), ActivationModel::uniform(1), cfg, x0, &mut rows);
        match r {
            Err(Error::Divergence { trial, .. }) => assert_eq!(trial, 9),
            Err(Error::Evaluation { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
