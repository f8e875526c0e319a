//! Client-side behaviour: honest local training and the attack families.
//!
//! Data-poisoning attacks (label flipping, backdoor) rewrite the malicious
//! clients' shards once, before training; those clients then train honestly
//! on poisoned data. Update attacks (inverse gradient, global-parameter
//! noise, LIE) act on each round's reports.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{Batch, Model};
use crate::seed::{self, Stream};

/// What a client sends back: `g = -(psi - theta) / alpha` and its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub gradient: Vec<f64>,
    pub loss: f64,
}

fn default_nu1() -> f64 {
    -5.0
}
fn default_nu2() -> f64 {
    1.5
}
fn default_image_side() -> usize {
    28
}
fn default_inverse_round() -> usize {
    2
}
fn default_global_round() -> usize {
    5
}

/// How LIE attackers pick `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LieZ {
    /// `z = Phi^-1((n - b_f - floor(n/2 + 1)) / (n - b_f))`, clamped to 0.1
    /// when the quantile argument is not positive.
    #[default]
    StealthBound,
    Fixed {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    #[default]
    None,
    FlipLabels,
    Backdoor {
        #[serde(default = "default_image_side")]
        image_side: usize,
    },
    InverseGradient,
    GlobalParam {
        #[serde(default = "default_nu1")]
        nu1: f64,
        #[serde(default = "default_nu2")]
        nu2: f64,
    },
    /// Half the attackers flip gradients from `inverse_from_round`, the other
    /// half corrupt the global parameters from `global_from_round`. Rounds
    /// are 1-based communication rounds.
    Double {
        #[serde(default = "default_nu1")]
        nu1: f64,
        #[serde(default = "default_nu2")]
        nu2: f64,
        #[serde(default = "default_inverse_round")]
        inverse_from_round: usize,
        #[serde(default = "default_global_round")]
        global_from_round: usize,
    },
    Lie {
        #[serde(default)]
        z: LieZ,
    },
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::GlobalParam { nu1, nu2 } | AttackSpec::Double { nu1, nu2, .. }
                if !(nu2 > 0.0 && nu2.is_finite() && nu1.is_finite()) =>
            {
                Err(Error::Config(format!(
                    "global-parameter noise needs finite nu1 and nu2 > 0, got ({nu1}, {nu2})"
                )))
            }
            AttackSpec::Backdoor { image_side } if image_side < 8 => Err(Error::Config(format!(
                "backdoor patch does not fit a {image_side}x{image_side} image"
            ))),
            AttackSpec::Lie {
                z: LieZ::Fixed { value },
            } if !value.is_finite() => Err(Error::Config("LIE z must be finite".into())),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::FlipLabels => "flip_labels",
            AttackSpec::Backdoor { .. } => "backdoor",
            AttackSpec::InverseGradient => "inverse_gradient",
            AttackSpec::GlobalParam { .. } => "global_param",
            AttackSpec::Double { .. } => "double",
            AttackSpec::Lie { .. } => "lie",
        }
    }
}

/// Inputs of one local-training call. `seed` is already specific to the
/// client and the call.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub epoch: usize,
    pub theta: &'a [f64],
    pub alpha: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl RoundContext<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "step size alpha = {} must be positive",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Visiting order of the shard's rows in local epoch `local_epoch`.
pub fn batch_order(seed: u64, local_epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(seed, Stream::LocalBatches, &[local_epoch as u64]));
    order
}

/// Local mini-batch SGD for `local_epochs` full passes (the last batch of a
/// pass may be short), then `g = -(psi - theta) / alpha` and the full-shard
/// loss at `psi`.
///
/// The summed step gradients are tracked directly, so `g` is exactly their
/// sum and `psi = theta - alpha * g` at every step.
pub fn client_update(ctx: &RoundContext<'_>, shard: &LabeledDataset, model: &Model) -> Result<ClientReport> {
    ctx.validate()?;
    if shard.is_empty() {
        return Err(Error::Domain("client update on an empty shard".into()));
    }
    let d = ctx.theta.len();
    let dim = shard.dim();
    let mut steps = vec![0.0; d];
    let mut psi = ctx.theta.to_vec();
    let mut features = Vec::with_capacity(ctx.batch_size * dim);
    let mut labels = Vec::with_capacity(ctx.batch_size);
    for e in 0..ctx.local_epochs {
        let order = batch_order(ctx.seed, e, shard.len());
        for chunk in order.chunks(ctx.batch_size) {
            features.clear();
            labels.clear();
            for &i in chunk {
                features.extend_from_slice(shard.row(i));
                labels.push(shard.labels()[i]);
            }
            let batch = Batch::new(&features, &labels, dim)?;
            let grad = model.gradient(&psi, &batch)?;
            for ((acc, g), (p, th)) in steps.iter_mut().zip(&grad).zip(psi.iter_mut().zip(ctx.theta)) {
                *acc += g;
                *p = th - ctx.alpha * *acc;
            }
        }
    }
    let loss = model.loss(&psi, &shard.as_batch())?;
    Ok(ClientReport { gradient: steps, loss })
}

/// Label `l` becomes `L - l - 1`.
pub fn poison_flip_labels(shard: &LabeledDataset) -> LabeledDataset {
    let mut out = shard.clone();
    let top = shard.num_classes() - 1;
    out.labels_mut().iter_mut().for_each(|l| *l = top - *l);
    out
}

pub const BACKDOOR_PATCH: usize = 8;

/// Blacks out the centred 8x8 patch of every image and relabels uniformly.
pub fn poison_backdoor(shard: &LabeledDataset, image_side: usize, seed: u64) -> Result<LabeledDataset> {
    if image_side * image_side != shard.dim() || image_side < BACKDOOR_PATCH {
        return Err(Error::Domain(format!(
            "feature length {} is not a {image_side}x{image_side} image",
            shard.dim()
        )));
    }
    let anchor = (image_side - BACKDOOR_PATCH) / 2;
    let mut out = shard.clone();
    let dim = shard.dim();
    for row in out.features_mut().chunks_exact_mut(dim) {
        for r in anchor..anchor + BACKDOOR_PATCH {
            row[r * image_side + anchor..r * image_side + anchor + BACKDOOR_PATCH].fill(0.0);
        }
    }
    let classes = shard.num_classes();
    let mut rng = seed::stream_rng(seed, Stream::Backdoor, &[]);
    out.labels_mut()
        .iter_mut()
        .for_each(|l| *l = rng.random_range(0..classes));
    Ok(out)
}

pub fn attack_inverse_gradient(report: ClientReport) -> ClientReport {
    ClientReport {
        gradient: report.gradient.into_iter().map(|g| -g).collect(),
        loss: report.loss,
    }
}

/// `theta + eps`, `eps_i ~ N(nu1 * mean(theta), nu2 * var(theta))` i.i.d.
pub fn attack_global_param(theta: &[f64], nu1: f64, nu2: f64, seed: u64) -> Result<Vec<f64>> {
    if !(nu2 > 0.0) {
        return Err(Error::Domain(format!("nu2 = {nu2} must be positive")));
    }
    if theta.is_empty() {
        return Ok(Vec::new());
    }
    let n = theta.len() as f64;
    let mean = theta.iter().sum::<f64>() / n;
    let var = theta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let noise = Normal::new(nu1 * mean, (nu2 * var).sqrt())
        .map_err(|e| Error::Domain(format!("global-parameter noise: {e}")))?;
    let mut rng = seed::stream_rng(seed, Stream::GlobalParam, &[]);
    Ok(theta.iter().map(|v| v + noise.sample(&mut rng)).collect())
}

/// The stealth-bound `z` for `n` clients of which `b_f` are Byzantine.
pub fn lie_stealth_z(n: usize, b_f: usize) -> Result<f64> {
    if n <= b_f {
        return Err(Error::Config(format!("LIE needs n > b_f, got n = {n}, b_f = {b_f}")));
    }
    let honest = (n - b_f) as f64;
    let needed = (n / 2 + 1) as f64;
    let p = (honest - needed) / honest;
    if p <= 0.0 {
        return Ok(0.1);
    }
    let standard = StdNormal::new(0.0, 1.0).expect("standard normal");
    Ok(standard.inverse_cdf(p))
}

/// Replaces every malicious gradient by `mu + z * sigma` (coordinate-wise
/// mean and population standard deviation over all submitted reports) and
/// its loss by the mean loss.
pub fn attack_lie(reports: &mut [ClientReport], malicious: &BTreeSet<usize>, z: f64) -> Result<()> {
    let n = reports.len();
    if malicious.len() >= n {
        return Err(Error::Config("LIE needs at least one honest report".into()));
    }
    let d = reports[0].gradient.len();
    let mut mean = vec![0.0; d];
    for r in reports.iter() {
        mean.iter_mut().zip(&r.gradient).for_each(|(m, g)| *m += g);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in reports.iter() {
        var.iter_mut()
            .zip(&r.gradient)
            .zip(&mean)
            .for_each(|((v, g), m)| *v += (g - m).powi(2));
    }
    let forged: Vec<f64> = mean
        .iter()
        .zip(&var)
        .map(|(m, v)| m + z * (v / n as f64).sqrt())
        .collect();
    let mean_loss = reports.iter().map(|r| r.loss).sum::<f64>() / n as f64;
    for &i in malicious {
        reports[i] = ClientReport {
            gradient: forged.clone(),
            loss: mean_loss,
        };
    }
    Ok(())
}

/// Per-client behaviour inside one collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientBehavior {
    Honest,
    InverseGradient,
    GlobalParam { nu1: f64, nu2: f64 },
    Lie,
}

/// Seeded 50/50 split of the malicious set for the double attack. The
/// first set (inverse gradient) gets the extra client when the count is odd.
pub fn split_double_attackers(malicious: &BTreeSet<usize>, seed: u64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut ids: Vec<usize> = malicious.iter().copied().collect();
    ids.shuffle(&mut seed::stream_rng(seed, Stream::DoubleSplit, &[]));
    let half = ids.len().div_ceil(2);
    let second = ids.split_off(half);
    (ids.into_iter().collect(), second.into_iter().collect())
}

/// Active attack per malicious client in 1-based communication `round`.
/// Clients before their trigger round behave honestly.
pub fn schedule_double_attack(
    round: usize,
    split: &(BTreeSet<usize>, BTreeSet<usize>),
    nu1: f64,
    nu2: f64,
    inverse_from_round: usize,
    global_from_round: usize,
) -> BTreeMap<usize, ClientBehavior> {
    let mut out = BTreeMap::new();
    for &c in &split.0 {
        let b = if round >= inverse_from_round {
            ClientBehavior::InverseGradient
        } else {
            ClientBehavior::Honest
        };
        out.insert(c, b);
    }
    for &c in &split.1 {
        let b = if round >= global_from_round {
            ClientBehavior::GlobalParam { nu1, nu2 }
        } else {
            ClientBehavior::Honest
        };
        out.insert(c, b);
    }
    out
}

/// Identifies one broadcast/collect cycle.
#[derive(Debug, Clone, Copy)]
pub struct Collection {
    pub epoch: usize,
    /// 0 for the first collection of an epoch, 1 for the second.
    pub phase: usize,
    pub alpha: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// The attack configuration of a run, bound to its malicious set.
#[derive(Debug, Clone)]
pub struct Adversary {
    attack: AttackSpec,
    malicious: BTreeSet<usize>,
    n_clients: usize,
    double_split: (BTreeSet<usize>, BTreeSet<usize>),
    lie_z: f64,
    seed: u64,
}

impl Adversary {
    pub fn new(attack: AttackSpec, malicious: BTreeSet<usize>, n_clients: usize, seed: u64) -> Result<Self> {
        attack.validate()?;
        if let Some(&c) = malicious.iter().find(|&&c| c >= n_clients) {
            return Err(Error::Config(format!("malicious id {c} out of {n_clients} clients")));
        }
        let lie_z = match attack {
            AttackSpec::Lie {
                z: LieZ::Fixed { value },
            } => value,
            AttackSpec::Lie { z: LieZ::StealthBound } => lie_stealth_z(n_clients, malicious.len())?,
            _ => 0.0,
        };
        if matches!(attack, AttackSpec::Lie { .. }) && malicious.len() >= n_clients {
            return Err(Error::Config("LIE needs at least one honest client".into()));
        }
        Ok(Self {
            attack,
            double_split: split_double_attackers(&malicious, seed),
            malicious,
            n_clients,
            lie_z,
            seed,
        })
    }

    pub fn honest(n_clients: usize) -> Self {
        Self::new(AttackSpec::None, BTreeSet::new(), n_clients, 0).expect("honest adversary")
    }

    pub fn attack(&self) -> &AttackSpec {
        &self.attack
    }

    pub fn malicious(&self) -> &BTreeSet<usize> {
        &self.malicious
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn lie_z(&self) -> f64 {
        self.lie_z
    }

    pub fn double_split(&self) -> &(BTreeSet<usize>, BTreeSet<usize>) {
        &self.double_split
    }

    /// Applies data poisoning to the malicious shards; benign shards are
    /// left untouched.
    pub fn poison_shards(&self, shards: &mut [LabeledDataset]) -> Result<()> {
        for &c in &self.malicious {
            let shard = &mut shards[c];
            match self.attack {
                AttackSpec::FlipLabels => *shard = poison_flip_labels(shard),
                AttackSpec::Backdoor { image_side } => {
                    let s = seed::derive(self.seed, Stream::Backdoor, &[c as u64]);
                    *shard = poison_backdoor(shard, image_side, s)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Behaviour of `client` during `epoch` (0-based; round = epoch + 1).
    pub fn behavior(&self, client: usize, epoch: usize) -> ClientBehavior {
        if !self.malicious.contains(&client) {
            return ClientBehavior::Honest;
        }
        match self.attack {
            AttackSpec::InverseGradient => ClientBehavior::InverseGradient,
            AttackSpec::GlobalParam { nu1, nu2 } => ClientBehavior::GlobalParam { nu1, nu2 },
            AttackSpec::Lie { .. } => ClientBehavior::Lie,
            AttackSpec::Double {
                nu1,
                nu2,
                inverse_from_round,
                global_from_round,
            } => schedule_double_attack(
                epoch + 1,
                &self.double_split,
                nu1,
                nu2,
                inverse_from_round,
                global_from_round,
            )[&client],
            AttackSpec::None | AttackSpec::FlipLabels | AttackSpec::Backdoor { .. } => ClientBehavior::Honest,
        }
    }

    /// One broadcast/collect cycle: every client runs local training from
    /// `theta` (possibly in parallel), then update attacks are applied.
    /// Reports are indexed by client id.
    pub fn collect(
        &self,
        theta: &[f64],
        shards: &[LabeledDataset],
        model: &Model,
        round: &Collection,
        exec: Execution,
    ) -> Result<Vec<ClientReport>> {
        if shards.len() != self.n_clients {
            return Err(Error::DimensionMismatch {
                expected: self.n_clients,
                actual: shards.len(),
            });
        }
        let path = |c: usize| [round.epoch as u64, round.phase as u64, c as u64];
        let mut reports = exec.try_map_range(self.n_clients, |c| {
            let behavior = self.behavior(c, round.epoch);
            let corrupted;
            let start = match behavior {
                ClientBehavior::GlobalParam { nu1, nu2 } => {
                    let s = seed::derive(round.seed, Stream::GlobalParam, &path(c));
                    corrupted = attack_global_param(theta, nu1, nu2, s)?;
                    &corrupted[..]
                }
                _ => theta,
            };
            let ctx = RoundContext {
                epoch: round.epoch,
                theta: start,
                alpha: round.alpha,
                local_epochs: round.local_epochs,
                batch_size: round.batch_size,
                seed: seed::derive(round.seed, Stream::LocalBatches, &path(c)),
            };
            let report = client_update(&ctx, &shards[c], model)?;
            Ok::<_, Error>(match behavior {
                ClientBehavior::InverseGradient => attack_inverse_gradient(report),
                _ => report,
            })
        })?;
        if matches!(self.attack, AttackSpec::Lie { .. }) && !self.malicious.is_empty() {
            attack_lie(&mut reports, &self.malicious, self.lie_z)?;
        }
        Ok(reports)
    }
}
