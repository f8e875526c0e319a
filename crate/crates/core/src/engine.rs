//! Round drivers: FedLAW (learned weights, two collections per epoch while
//! the weights are being learned), the BSUM ablation (weights from a
//! greedy linear program over losses) and the baseline aggregators (one
//! collection per epoch).
//!
//! Server-side work is sequential; client work inside a collection follows
//! the configured [`Execution`]. Reports are reduced in client-id order, so
//! traces do not depend on the execution policy.

use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, ClientReport, Collection};
use crate::aggregators::{clip_to_ball, AggregatorSpec, GradientMatrix, Resolved};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::Model;
use crate::seed::{self, Stream};
use crate::simplex::{
    cap_decomposition, max_pairwise_distance, project_sparse_capped_simplex, SimplexSpec, WeightVector,
};

/// A loss above this, or any non-finite parameter, ends the run as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Weight step size, per epoch `k` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Fixed {
        value: f64,
    },
    /// `beta0 / (1 + k)^p`, `p` in `(0.5, 1]`.
    RobbinsMonro {
        beta0: f64,
        p: f64,
    },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self::Fixed { value: 1e-2 }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                Err(Error::Config(format!("beta = {value} must be positive")))
            }
            Self::RobbinsMonro { beta0, .. } if !(beta0 > 0.0 && beta0.is_finite()) => {
                Err(Error::Config(format!("beta0 = {beta0} must be positive")))
            }
            Self::RobbinsMonro { p, .. } if !(p > 0.5 && p <= 1.0) => Err(Error::Config(format!(
                "Robbins-Monro exponent p = {p} outside (0.5, 1]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Self::Fixed { value } => value,
            Self::RobbinsMonro { beta0, p } => beta0 / (1.0 + k as f64).powf(p),
        }
    }
}

/// How the server turns reports into an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Fedlaw,
    Bsum,
    Baseline {
        #[serde(flatten)]
        aggregator: AggregatorSpec,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Self::Fedlaw => "fedlaw".into(),
            Self::Bsum => "bsum".into(),
            Self::Baseline { aggregator } => aggregator.name(),
        }
    }
}

fn default_epochs() -> usize {
    100
}
fn default_local_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub alpha: f64,
    #[serde(default)]
    pub beta: BetaSchedule,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Sparsity budget; defaults to `(1 - malicious_fraction) n`.
    #[serde(default)]
    pub s: Option<usize>,
    /// Weight cap; defaults to `1/(s - 10)` when `s > 10`, else `1/s`.
    #[serde(default)]
    pub t: Option<f64>,
    /// Epochs during which weights are learned; defaults to all of them.
    #[serde(default)]
    pub weight_update_rounds: Option<usize>,
    #[serde(default)]
    pub clip_radius: Option<f64>,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

/// Default `(s, t)` for `n` clients with the given malicious fraction.
pub fn default_sparsity(n: usize, malicious_fraction: f64) -> (usize, f64) {
    let s = (((1.0 - malicious_fraction) * n as f64).round() as usize).clamp(1, n.max(1));
    let t = if s > 10 { 1.0 / (s - 10) as f64 } else { 1.0 / s as f64 };
    (s, t)
}

/// An [`EngineConfig`] with every default filled in for a concrete client
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEngine {
    pub config: EngineConfig,
    pub spec: SimplexSpec,
    pub weight_update_rounds: usize,
    pub aggregator: Option<Resolved>,
}

impl EngineConfig {
    pub fn resolve(&self, n: usize, malicious_fraction: f64) -> Result<ResolvedEngine> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        self.beta.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.clip_radius {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_radius = {c} must be positive")));
            }
        }
        let (s_default, _) = default_sparsity(n, malicious_fraction);
        let s = self.s.unwrap_or(s_default);
        let t = match self.t {
            Some(t) => t,
            None if s > 10 => 1.0 / (s - 10) as f64,
            None => 1.0 / s as f64,
        };
        let spec = SimplexSpec::new(n, s, t).map_err(|e| Error::Config(e.to_string()))?;
        if !spec.feasible() {
            return Err(Error::Config(format!(
                "s * t = {} < 1: weight set is empty",
                s as f64 * t
            )));
        }
        let weight_update_rounds = self.weight_update_rounds.unwrap_or(self.epochs);
        if weight_update_rounds > self.epochs {
            return Err(Error::Config(format!(
                "weight_update_rounds = {weight_update_rounds} exceeds epochs = {}",
                self.epochs
            )));
        }
        let aggregator = match self.method {
            Method::Baseline { aggregator } => Some(aggregator.resolve(n, malicious_fraction)?),
            _ => None,
        };
        Ok(ResolvedEngine {
            config: self.clone(),
            spec,
            weight_update_rounds,
            aggregator,
        })
    }
}

/// What the server recorded at the end of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub epoch: usize,
    /// Weights in force after the epoch (`w_{k+1}`).
    pub weights: WeightVector,
    pub theta_norm: f64,
    /// Client losses the weight step consumed (the first collection's
    /// losses when no weight step ran).
    pub losses: Vec<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub theta: Vec<f64>,
    pub weights: WeightVector,
    /// Previous aggregate, the centre for centred clipping.
    pub previous_aggregate: Option<Vec<f64>>,
    /// Broadcast/collect cycles performed so far.
    pub collections: usize,
}

impl TrainingState {
    pub fn new(theta: Vec<f64>, n_clients: usize) -> Self {
        Self {
            theta,
            weights: WeightVector::uniform(n_clients),
            previous_aggregate: None,
            collections: 0,
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub traces: Vec<RoundTrace>,
    pub final_state: TrainingState,
    pub divergence: Option<Divergence>,
}

/// `h = w + alpha beta G^T (G~ w) - beta f~`, via two matrix-vector
/// products.
pub fn compute_h(
    w: &[f64],
    g: &GradientMatrix,
    g_tilde: &GradientMatrix,
    f_tilde: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    let n = w.len();
    for actual in [g.n(), g_tilde.n(), f_tilde.len()] {
        if actual != n {
            return Err(Error::DimensionMismatch { expected: n, actual });
        }
    }
    if g.d() != g_tilde.d() {
        return Err(Error::DimensionMismatch {
            expected: g.d(),
            actual: g_tilde.d(),
        });
    }
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Domain(format!(
            "step sizes must be non-negative, got ({alpha}, {beta})"
        )));
    }
    let z = g_tilde.combine(w);
    let gz = g.transpose_times(&z);
    Ok(w.iter()
        .zip(&gz)
        .zip(f_tilde)
        .map(|((wi, gi), fi)| wi + alpha * beta * gi - beta * fi)
        .collect())
}

/// Minimiser of `sum w_i f_i` over the sparse capped simplex: cap `t` on
/// the cheapest clients (ties to the lower id) until the mass reaches one.
pub fn bsum_weights(losses: &[f64], spec: &SimplexSpec) -> Result<WeightVector> {
    if losses.len() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            actual: losses.len(),
        });
    }
    if !spec.feasible() {
        return Err(Error::Infeasible(format!(
            "s * t < 1 for s = {}, t = {}",
            spec.s(),
            spec.t()
        )));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let (k, r) = cap_decomposition(spec.t());
    let mut w = vec![0.0; losses.len()];
    for &i in order.iter().take(k) {
        w[i] = spec.t();
    }
    if r > 0.0 {
        w[order[k]] = r;
    }
    Ok(WeightVector::new(w))
}

/// Closed-form Lipschitz bound of the weight map:
/// `alpha C^2 (n^{3/2} + n + alpha n L + alpha n^2 L rho / 2)` with `rho`
/// the diameter bound of the weight set.
pub fn lw_bound(alpha: f64, c: f64, n: usize, l_max: f64, spec: &SimplexSpec) -> Result<f64> {
    let rho = max_pairwise_distance(spec)?;
    let n = n as f64;
    Ok(alpha * c * c * (n.powf(1.5) + n + alpha * n * l_max + alpha * n * n * l_max * rho / 2.0))
}

/// Everything a round needs besides the mutable state.
pub struct Trainer<'a> {
    pub engine: &'a ResolvedEngine,
    pub model: &'a Model,
    pub shards: &'a [LabeledDataset],
    pub adversary: &'a Adversary,
    pub test: &'a LabeledDataset,
}

enum Step {
    Done(RoundTrace),
    Diverged(Divergence),
}

impl Trainer<'_> {
    fn config(&self) -> &EngineConfig {
        &self.engine.config
    }

    fn collect(
        &self,
        state: &mut TrainingState,
        theta: &[f64],
        epoch: usize,
        phase: usize,
        local_epochs: usize,
    ) -> Result<Vec<ClientReport>> {
        let cfg = self.config();
        let round = Collection {
            epoch,
            phase,
            alpha: cfg.alpha,
            local_epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        };
        state.collections += 1;
        self.adversary
            .collect(theta, self.shards, self.model, &round, cfg.execution)
    }

    fn gradients(&self, reports: &[ClientReport]) -> Result<GradientMatrix> {
        let cols = reports
            .iter()
            .map(|r| match self.config().clip_radius {
                Some(c) => clip_to_ball(&r.gradient, c),
                None => r.gradient.clone(),
            })
            .collect();
        GradientMatrix::new(cols)
    }

    fn diverged(epoch: usize, reports: &[ClientReport]) -> Option<Divergence> {
        reports.iter().enumerate().find_map(|(c, r)| {
            if !r.loss.is_finite() || r.loss > DIVERGENCE_LOSS {
                Some(Divergence {
                    epoch,
                    reason: format!("client {c} reported loss {}", r.loss),
                })
            } else if r.gradient.iter().any(|v| !v.is_finite()) {
                Some(Divergence {
                    epoch,
                    reason: format!("client {c} reported a non-finite gradient"),
                })
            } else {
                None
            }
        })
    }

    fn step(theta: &[f64], alpha: f64, direction: &[f64]) -> Vec<f64> {
        theta.iter().zip(direction).map(|(t, d)| t - alpha * d).collect()
    }

    fn finish(&self, state: &mut TrainingState, epoch: usize, theta: Vec<f64>, losses: Vec<f64>) -> Result<Step> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Ok(Step::Diverged(Divergence {
                epoch,
                reason: "non-finite model parameters".into(),
            }));
        }
        state.theta = theta;
        let test_accuracy = self.model.accuracy(&state.theta, &self.test.as_batch())?;
        Ok(Step::Done(RoundTrace {
            epoch,
            weights: state.weights.clone(),
            theta_norm: state.theta.iter().map(|v| v * v).sum::<f64>().sqrt(),
            losses,
            test_accuracy,
        }))
    }

    fn fedlaw(&self, state: &mut TrainingState, epoch: usize) -> Result<Step> {
        let cfg = self.config();
        let alpha = cfg.alpha;
        let theta = state.theta.clone();
        let first = self.collect(state, &theta, epoch, 0, cfg.local_epochs)?;
        if let Some(d) = Self::diverged(epoch, &first) {
            return Ok(Step::Diverged(d));
        }
        let g = self.gradients(&first)?;
        let mut losses: Vec<f64> = first.iter().map(|r| r.loss).collect();
        if epoch < self.engine.weight_update_rounds {
            let theta_tilde = Self::step(&theta, alpha, &g.combine(state.weights.as_slice()));
            let second = self.collect(state, &theta_tilde, epoch, 1, cfg.local_epochs)?;
            if let Some(d) = Self::diverged(epoch, &second) {
                return Ok(Step::Diverged(d));
            }
            let g_tilde = self.gradients(&second)?;
            losses = second.iter().map(|r| r.loss).collect();
            let h = compute_h(
                state.weights.as_slice(),
                &g,
                &g_tilde,
                &losses,
                alpha,
                cfg.beta.at(epoch),
            )?;
            state.weights = project_sparse_capped_simplex(&h, &self.engine.spec)?;
        }
        let next = Self::step(&theta, alpha, &g.combine(state.weights.as_slice()));
        self.finish(state, epoch, next, losses)
    }

    fn bsum(&self, state: &mut TrainingState, epoch: usize) -> Result<Step> {
        let cfg = self.config();
        let alpha = cfg.alpha;
        let theta = state.theta.clone();
        let first = self.collect(state, &theta, epoch, 0, cfg.local_epochs)?;
        if let Some(d) = Self::diverged(epoch, &first) {
            return Ok(Step::Diverged(d));
        }
        let g = self.gradients(&first)?;
        let mut losses: Vec<f64> = first.iter().map(|r| r.loss).collect();
        if epoch < self.engine.weight_update_rounds {
            let theta_tilde = Self::step(&theta, alpha, &g.combine(state.weights.as_slice()));
            // A zero-epoch collection reports f_i(theta~) without training.
            let probe = self.collect(state, &theta_tilde, epoch, 1, 0)?;
            if let Some(d) = Self::diverged(epoch, &probe) {
                return Ok(Step::Diverged(d));
            }
            losses = probe.iter().map(|r| r.loss).collect();
            state.weights = bsum_weights(&losses, &self.engine.spec)?;
        }
        let next = Self::step(&theta, alpha, &g.combine(state.weights.as_slice()));
        self.finish(state, epoch, next, losses)
    }

    fn baseline(&self, state: &mut TrainingState, epoch: usize, agg: &Resolved) -> Result<Step> {
        let cfg = self.config();
        let theta = state.theta.clone();
        let reports = self.collect(state, &theta, epoch, 0, cfg.local_epochs)?;
        if let Some(d) = Self::diverged(epoch, &reports) {
            return Ok(Step::Diverged(d));
        }
        let g = self.gradients(&reports)?;
        let bucket_seed = seed::derive(cfg.seed, Stream::Bucketing, &[epoch as u64]);
        let direction = agg.aggregate(&g, state.previous_aggregate.as_deref(), bucket_seed, cfg.execution)?;
        let next = Self::step(&theta, cfg.alpha, &direction);
        state.previous_aggregate = Some(direction);
        self.finish(state, epoch, next, reports.iter().map(|r| r.loss).collect())
    }

    fn epoch(&self, state: &mut TrainingState, epoch: usize) -> Result<Step> {
        match (&self.config().method, &self.engine.aggregator) {
            (Method::Fedlaw, _) => self.fedlaw(state, epoch),
            (Method::Bsum, _) => self.bsum(state, epoch),
            (Method::Baseline { .. }, Some(agg)) => self.baseline(state, epoch, agg),
            (Method::Baseline { .. }, None) => {
                Err(Error::Config("baseline method without a resolved aggregator".into()))
            }
        }
    }

    /// `None` when the epoch diverged.
    pub fn fedlaw_epoch(&self, state: &mut TrainingState, epoch: usize) -> Result<Option<RoundTrace>> {
        Ok(into_trace(self.fedlaw(state, epoch)?))
    }

    pub fn bsum_epoch(&self, state: &mut TrainingState, epoch: usize) -> Result<Option<RoundTrace>> {
        Ok(into_trace(self.bsum(state, epoch)?))
    }

    pub fn baseline_epoch(
        &self,
        state: &mut TrainingState,
        epoch: usize,
        agg: &Resolved,
    ) -> Result<Option<RoundTrace>> {
        Ok(into_trace(self.baseline(state, epoch, agg)?))
    }

    /// Runs `epochs` epochs from `theta0`, evaluating test accuracy after
    /// each. Divergence ends the run early and is reported in the outcome.
    pub fn run(&self, theta0: Vec<f64>) -> Result<TrainingOutcome> {
        if self.shards.len() != self.engine.spec.n() {
            return Err(Error::DimensionMismatch {
                expected: self.engine.spec.n(),
                actual: self.shards.len(),
            });
        }
        if theta0.len() != self.model.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.model.param_count(),
                actual: theta0.len(),
            });
        }
        let mut state = TrainingState::new(theta0, self.shards.len());
        let mut traces = Vec::with_capacity(self.config().epochs);
        for epoch in 0..self.config().epochs {
            match self.epoch(&mut state, epoch)? {
                Step::Done(trace) => traces.push(trace),
                Step::Diverged(d) => {
                    return Ok(TrainingOutcome {
                        traces,
                        final_state: state,
                        divergence: Some(d),
                    })
                }
            }
        }
        Ok(TrainingOutcome {
            traces,
            final_state: state,
            divergence: None,
        })
    }
}

fn into_trace(step: Step) -> Option<RoundTrace> {
    match step {
        Step::Done(t) => Some(t),
        Step::Diverged(_) => None,
    }
}

/// Convenience wrapper around [`Trainer::run`].
pub fn run_training(
    engine: &ResolvedEngine,
    model: &Model,
    shards: &[LabeledDataset],
    adversary: &Adversary,
    test: &LabeledDataset,
    theta0: Vec<f64>,
) -> Result<TrainingOutcome> {
    Trainer {
        engine,
        model,
        shards,
        adversary,
        test,
    }
    .run(theta0)
}
