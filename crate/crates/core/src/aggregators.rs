//! Baseline aggregation rules: the round's client gradients in, one update
//! direction out.
//!
//! Per-coordinate rules (median, trimmed mean, Bulyan's refinement) and the
//! pairwise-distance table used by Krum fan out across coordinates/rows
//! through [`Execution`]; each output entry is computed independently, so
//! results are bit-identical across execution policies.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::{self, Stream};

/// Client gradients as columns, in client-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    columns: Vec<Vec<f64>>,
    d: usize,
}

impl GradientMatrix {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        let d = columns
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Domain("gradient matrix needs at least one column".into()))?;
        for (i, c) in columns.iter().enumerate() {
            if c.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("column {i} has non-finite entries")));
            }
        }
        Ok(Self { columns, d })
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `G w`.
    pub fn combine(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (c, &wi) in self.columns.iter().zip(w) {
            if wi != 0.0 {
                out.iter_mut().zip(c).for_each(|(o, v)| *o += wi * v);
            }
        }
        out
    }

    /// `G^T z`.
    pub fn transpose_times(&self, z: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| dot(c, z)).collect()
    }

    fn coordinate(&self, j: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[j]).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mean_of(cols: &[&[f64]], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for c in cols {
        out.iter_mut().zip(c.iter()).for_each(|(o, v)| *o += v);
    }
    let n = cols.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Column mean.
pub fn fedavg(g: &GradientMatrix) -> Vec<f64> {
    let cols: Vec<&[f64]> = g.columns.iter().map(Vec::as_slice).collect();
    mean_of(&cols, g.d)
}

/// Krum score of each candidate: the sum of squared distances to its
/// `neighbors` nearest other candidates.
pub fn krum_scores(g: &GradientMatrix, candidates: &[usize], neighbors: usize, exec: Execution) -> Vec<f64> {
    scores_with(candidates, neighbors, exec, |i, j| dist2(g.column(i), g.column(j)))
}

fn scores_with<D>(candidates: &[usize], neighbors: usize, exec: Execution, dist: D) -> Vec<f64>
where
    D: Fn(usize, usize) -> f64 + Sync + Send,
{
    exec.map_range(candidates.len(), |a| {
        let mut d: Vec<f64> = candidates
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(_, &j)| dist(candidates[a], j))
            .collect();
        d.sort_by(f64::total_cmp);
        d.iter().take(neighbors).sum()
    })
}

/// Full squared-distance matrix, row `i` holding `||g_i - g_j||^2`.
fn pairwise_dist2(g: &GradientMatrix, exec: Execution) -> Vec<Vec<f64>> {
    exec.map_range(g.n(), |i| (0..g.n()).map(|j| dist2(g.column(i), g.column(j))).collect())
}

/// Indices of `candidates` ordered by (score, client id).
fn rank_by_score(candidates: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(candidates[a].cmp(&candidates[b])));
    order.into_iter().map(|k| candidates[k]).collect()
}

/// Multi-Krum keeping `retained` columns. The Byzantine count is inferred
/// from the retained-count relation `retained = n - b_f - 2` (floored at
/// zero), and each column is scored over its `n - b_f - 2` nearest
/// neighbours.
pub fn krum(g: &GradientMatrix, retained: usize) -> Result<Vec<f64>> {
    krum_with(g, retained, Execution::Sequential)
}

pub fn krum_with(g: &GradientMatrix, retained: usize, exec: Execution) -> Result<Vec<f64>> {
    let n = g.n();
    if retained == 0 || retained > n {
        return Err(Error::Domain(format!("krum retains {retained} of {n} columns")));
    }
    if n < 3 {
        return Err(Error::Config(format!("krum needs at least 3 clients, got {n}")));
    }
    let b_f = n.saturating_sub(retained + 2);
    let neighbors = n - b_f - 2;
    let all: Vec<usize> = (0..n).collect();
    let scores = krum_scores(g, &all, neighbors, exec);
    let mut chosen = rank_by_score(&all, &scores);
    chosen.truncate(retained);
    chosen.sort_unstable();
    let cols: Vec<&[f64]> = chosen.iter().map(|&i| g.column(i)).collect();
    Ok(mean_of(&cols, g.d))
}

fn per_coordinate<F>(g: &GradientMatrix, exec: Execution, f: F) -> Vec<f64>
where
    F: Fn(Vec<f64>) -> f64 + Sync + Send,
{
    exec.map_range(g.d, |j| f(g.coordinate(j)))
}

/// Number trimmed from each side: `ceil(fraction * n)`, with `1e-9` slack
/// so that e.g. `0.3 * 10` trims 3.
pub fn trim_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Per coordinate: drop the `k` largest and `k` smallest values and average
/// the rest, `k = ceil(fraction * n)`.
pub fn trimmed_mean(g: &GradientMatrix, trim_fraction: f64) -> Result<Vec<f64>> {
    trimmed_mean_with(g, trim_fraction, Execution::Sequential)
}

pub fn trimmed_mean_with(g: &GradientMatrix, trim_fraction: f64, exec: Execution) -> Result<Vec<f64>> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::Domain(format!("trim fraction {trim_fraction} outside [0, 0.5)")));
    }
    let n = g.n();
    let k = trim_count(trim_fraction, n);
    if n <= 2 * k {
        return Err(Error::Config(format!(
            "trimming {k} per side leaves no survivors among {n}"
        )));
    }
    Ok(per_coordinate(g, exec, |mut v| {
        v.sort_by(f64::total_cmp);
        let kept = &v[k..n - k];
        kept.iter().sum::<f64>() / kept.len() as f64
    }))
}

/// Per-coordinate median; even counts average the two middle values.
pub fn coordinate_median(g: &GradientMatrix) -> Vec<f64> {
    coordinate_median_with(g, Execution::Sequential)
}

pub fn coordinate_median_with(g: &GradientMatrix, exec: Execution) -> Vec<f64> {
    per_coordinate(g, exec, |mut v| {
        v.sort_by(f64::total_cmp);
        median_sorted(&v)
    })
}

/// Bulyan: pick `pool_size` columns one at a time by Krum score (scores
/// recomputed over the remaining candidates after every pick), then per
/// coordinate average the `inner_size` pool values closest to the pool's
/// coordinate median.
///
/// The Byzantine count for the Krum neighbour count is inferred from
/// `inner_size = n - b_f - 2`.
pub fn bulyan(g: &GradientMatrix, pool_size: usize, inner_size: usize) -> Result<Vec<f64>> {
    bulyan_with(g, pool_size, inner_size, Execution::Sequential)
}

pub fn bulyan_with(g: &GradientMatrix, pool_size: usize, inner_size: usize, exec: Execution) -> Result<Vec<f64>> {
    let n = g.n();
    if pool_size == 0 || pool_size > n || inner_size == 0 || inner_size > pool_size {
        return Err(Error::Config(format!(
            "bulyan sizes pool = {pool_size}, inner = {inner_size} infeasible for n = {n}"
        )));
    }
    let pool = bulyan_pool(g, pool_size, inner_size, exec);
    let sub = GradientMatrix {
        columns: pool.iter().map(|&i| g.columns[i].clone()).collect(),
        d: g.d,
    };
    Ok(per_coordinate(&sub, exec, |v| {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median_sorted(&sorted);
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| (v[a] - med).abs().total_cmp(&(v[b] - med).abs()).then(a.cmp(&b)));
        order[..inner_size].iter().map(|&k| v[k]).sum::<f64>() / inner_size as f64
    }))
}

/// The iterative Krum selection stage of Bulyan, in pick order.
pub fn bulyan_pool(g: &GradientMatrix, pool_size: usize, inner_size: usize, exec: Execution) -> Vec<usize> {
    let n = g.n();
    let b_f = n.saturating_sub(inner_size + 2);
    let dists = pairwise_dist2(g, exec);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut pool = Vec::with_capacity(pool_size);
    while pool.len() < pool_size {
        let pick = if remaining.len() == 1 {
            remaining[0]
        } else {
            let m = remaining.len();
            let neighbors = m.saturating_sub(b_f + 2).clamp(1, m - 1);
            let scores = scores_with(&remaining, neighbors, exec, |i, j| dists[i][j]);
            rank_by_score(&remaining, &scores)[0]
        };
        remaining.retain(|&i| i != pick);
        pool.push(pick);
    }
    pool.sort_unstable();
    pool
}

/// Centred clipping: `iters` times,
/// `c <- c + (1/n) sum_i (g_i - c) min(1, tau / ||g_i - c||)`.
pub fn cclip(g: &GradientMatrix, tau: f64, iters: usize, center: Option<&[f64]>) -> Result<Vec<f64>> {
    if !(tau > 0.0) || iters == 0 {
        return Err(Error::Domain(format!(
            "cclip needs tau > 0 and iters >= 1, got ({tau}, {iters})"
        )));
    }
    let mut c = match center {
        Some(c) if c.len() == g.d => c.to_vec(),
        Some(c) => {
            return Err(Error::DimensionMismatch {
                expected: g.d,
                actual: c.len(),
            })
        }
        None => vec![0.0; g.d],
    };
    let n = g.n() as f64;
    for _ in 0..iters {
        let mut step = vec![0.0; g.d];
        for col in &g.columns {
            let diff: Vec<f64> = col.iter().zip(&c).map(|(x, y)| x - y).collect();
            let r = norm(&diff);
            let scale = if r > tau { tau / r } else { 1.0 };
            step.iter_mut().zip(&diff).for_each(|(s, v)| *s += scale * v);
        }
        c.iter_mut().zip(&step).for_each(|(ci, s)| *ci += s / n);
    }
    Ok(c)
}

/// Smoothed Weiszfeld iterations for the geometric median, started at the
/// mean.
pub fn rfa(g: &GradientMatrix, nu: f64, iters: usize) -> Result<Vec<f64>> {
    if !(nu > 0.0) || iters == 0 {
        return Err(Error::Domain(format!(
            "rfa needs nu > 0 and R >= 1, got ({nu}, {iters})"
        )));
    }
    let mut c = fedavg(g);
    for _ in 0..iters {
        let w: Vec<f64> = g
            .columns
            .iter()
            .map(|col| 1.0 / nu.max(dist2(col, &c).sqrt()))
            .collect();
        c = weighted_mean(g, &w);
    }
    Ok(c)
}

fn weighted_mean(g: &GradientMatrix, w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut c = g.combine(w);
    c.iter_mut().for_each(|v| *v /= total);
    c
}

pub const HUBER_MAX_ITERS: usize = 100;
pub const HUBER_TOL: f64 = 1e-8;

/// Huber location estimate by iteratively reweighted averaging with weights
/// `min(1, tau / ||g_i - c||)`, started at the mean. Stops when the centre
/// moves less than `1e-8` times the sample spread (largest distance to the
/// mean), or after 100 iterations.
pub fn huber(g: &GradientMatrix, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("huber threshold {tau} must be positive")));
    }
    let mut c = fedavg(g);
    let spread = g.columns.iter().map(|col| dist2(col, &c).sqrt()).fold(0.0, f64::max);
    for _ in 0..HUBER_MAX_ITERS {
        let w: Vec<f64> = g
            .columns
            .iter()
            .map(|col| {
                let r = dist2(col, &c).sqrt();
                if r > tau {
                    tau / r
                } else {
                    1.0
                }
            })
            .collect();
        let next = weighted_mean(g, &w);
        let moved = dist2(&next, &c).sqrt();
        c = next;
        if moved <= HUBER_TOL * spread {
            break;
        }
    }
    Ok(c)
}

/// Projects `g` onto the l2 ball of radius `radius`.
pub fn clip_to_ball(g: &[f64], radius: f64) -> Vec<f64> {
    let r = norm(g);
    if r <= radius {
        g.to_vec()
    } else {
        g.iter().map(|v| v * radius / r).collect()
    }
}

/// The seeded column order used by bucketing.
pub fn bucket_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(seed, Stream::Bucketing, &[]));
    order
}

/// Bucket means: shuffle the columns (unless `factor == 1`), cut into
/// consecutive buckets of at most `factor` columns and average each.
pub fn bucket_means(g: &GradientMatrix, factor: usize, seed: u64) -> Result<GradientMatrix> {
    if factor == 0 {
        return Err(Error::Domain("bucketing factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let order = bucket_permutation(g.n(), seed);
    let columns = order
        .chunks(factor)
        .map(|chunk| {
            let cols: Vec<&[f64]> = chunk.iter().map(|&i| g.column(i)).collect();
            mean_of(&cols, g.d)
        })
        .collect();
    Ok(GradientMatrix { columns, d: g.d })
}

fn default_cclip_tau() -> f64 {
    10.0
}
fn default_cclip_iters() -> usize {
    1
}
fn default_rfa_nu() -> f64 {
    1e-6
}
fn default_rfa_iters() -> usize {
    3
}
fn default_huber_tau() -> f64 {
    0.2
}

/// A baseline rule with its hyper-parameters. Size parameters left unset
/// take their defaults from the run's malicious fraction (see
/// [`AggregatorSpec::resolve`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorRule {
    Fedavg,
    Krum {
        #[serde(default)]
        retained: Option<usize>,
    },
    TrimmedMean {
        #[serde(default)]
        trim_fraction: Option<f64>,
    },
    Cwmed,
    Bulyan {
        #[serde(default)]
        pool_size: Option<usize>,
        #[serde(default)]
        inner_size: Option<usize>,
    },
    Cclip {
        #[serde(default = "default_cclip_tau")]
        tau: f64,
        #[serde(default = "default_cclip_iters")]
        iters: usize,
    },
    Rfa {
        #[serde(default = "default_rfa_nu")]
        nu: f64,
        #[serde(default = "default_rfa_iters")]
        iters: usize,
    },
    Huber {
        #[serde(default = "default_huber_tau")]
        tau: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    #[serde(flatten)]
    pub rule: AggregatorRule,
    #[serde(default)]
    pub bucketing: Option<usize>,
}

impl AggregatorSpec {
    pub fn plain(rule: AggregatorRule) -> Self {
        Self { rule, bucketing: None }
    }

    pub fn name(&self) -> String {
        let base = match self.rule {
            AggregatorRule::Fedavg => "fedavg",
            AggregatorRule::Krum { .. } => "krum",
            AggregatorRule::TrimmedMean { .. } => "trimmed_mean",
            AggregatorRule::Cwmed => "cwmed",
            AggregatorRule::Bulyan { .. } => "bulyan",
            AggregatorRule::Cclip { .. } => "cclip",
            AggregatorRule::Rfa { .. } => "rfa",
            AggregatorRule::Huber { .. } => "huber",
        };
        match self.bucketing {
            Some(f) if f > 1 => format!("{base}_bucketing{f}"),
            _ => base.to_string(),
        }
    }

    /// Fills unset sizes from the malicious fraction, scaled to `n` clients:
    /// Krum keeps `(1 - frac) n - 2`; trimmed mean trims `frac`; Bulyan uses
    /// a pool of `n - 2 b_f` and an inner size of `min((1 - frac) n - 2, pool)`.
    pub fn resolve(&self, n: usize, malicious_fraction: f64) -> Result<Resolved> {
        if !(0.0..1.0).contains(&malicious_fraction) {
            return Err(Error::Config(format!(
                "malicious fraction {malicious_fraction} outside [0, 1)"
            )));
        }
        let b_f = (malicious_fraction * n as f64).round() as usize;
        let honest_minus_two = n.saturating_sub(b_f + 2).max(1);
        let rule = match self.rule {
            AggregatorRule::Krum { retained } => ResolvedRule::Krum {
                retained: retained.unwrap_or(honest_minus_two),
            },
            AggregatorRule::TrimmedMean { trim_fraction } => ResolvedRule::TrimmedMean {
                trim_fraction: trim_fraction.unwrap_or(malicious_fraction),
            },
            AggregatorRule::Bulyan { pool_size, inner_size } => {
                let pool = pool_size.unwrap_or_else(|| n.saturating_sub(2 * b_f).max(1));
                let inner = inner_size.unwrap_or_else(|| honest_minus_two.min(pool));
                ResolvedRule::Bulyan { pool, inner }
            }
            AggregatorRule::Fedavg => ResolvedRule::Fedavg,
            AggregatorRule::Cwmed => ResolvedRule::Cwmed,
            AggregatorRule::Cclip { tau, iters } => ResolvedRule::Cclip { tau, iters },
            AggregatorRule::Rfa { nu, iters } => ResolvedRule::Rfa { nu, iters },
            AggregatorRule::Huber { tau } => ResolvedRule::Huber { tau },
        };
        let resolved = Resolved {
            rule,
            bucketing: self.bucketing.unwrap_or(1),
            n,
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

/// A rule with every size fixed for `n` clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedRule {
    Fedavg,
    Krum { retained: usize },
    TrimmedMean { trim_fraction: f64 },
    Cwmed,
    Bulyan { pool: usize, inner: usize },
    Cclip { tau: f64, iters: usize },
    Rfa { nu: f64, iters: usize },
    Huber { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub rule: ResolvedRule,
    pub bucketing: usize,
    pub n: usize,
}

fn rescale(size: usize, from: usize, to: usize) -> usize {
    ((size as f64 * to as f64 / from as f64).round() as usize).clamp(1, to)
}

impl Resolved {
    fn validate(&self) -> Result<()> {
        if self.bucketing == 0 {
            return Err(Error::Config("bucketing factor must be at least 1".into()));
        }
        let inner = self.bucketed_rule();
        let m = self.n.div_ceil(self.bucketing);
        if m == 1 && self.bucketing > 1 {
            return Ok(());
        }
        match inner {
            ResolvedRule::Krum { retained } if retained == 0 || retained > m || m < 3 => Err(Error::Config(format!(
                "krum retaining {retained} of {m} inputs is infeasible"
            ))),
            ResolvedRule::TrimmedMean { trim_fraction }
                if !(0.0..0.5).contains(&trim_fraction) || m <= 2 * trim_count(trim_fraction, m) =>
            {
                Err(Error::Config(format!(
                    "trim fraction {trim_fraction} infeasible for {m} inputs"
                )))
            }
            ResolvedRule::Bulyan { pool, inner } if pool == 0 || pool > m || inner == 0 || inner > pool => Err(
                Error::Config(format!("bulyan pool {pool} / inner {inner} infeasible for {m} inputs")),
            ),
            ResolvedRule::Cclip { tau, iters } if !(tau > 0.0) || iters == 0 => {
                Err(Error::Config("cclip needs tau > 0 and at least one iteration".into()))
            }
            ResolvedRule::Rfa { nu, iters } if !(nu > 0.0) || iters == 0 => {
                Err(Error::Config("rfa needs nu > 0 and at least one iteration".into()))
            }
            ResolvedRule::Huber { tau } if !(tau > 0.0) => Err(Error::Config("huber needs tau > 0".into())),
            _ => Ok(()),
        }
    }

    /// The rule applied to bucket means, with size parameters rescaled in
    /// proportion to the number of buckets (rounded, at least 1).
    pub fn bucketed_rule(&self) -> ResolvedRule {
        let m = self.n.div_ceil(self.bucketing);
        if m == self.n {
            return self.rule;
        }
        match self.rule {
            ResolvedRule::Krum { retained } => ResolvedRule::Krum {
                retained: rescale(retained, self.n, m),
            },
            ResolvedRule::Bulyan { pool, inner } => {
                let pool = rescale(pool, self.n, m);
                ResolvedRule::Bulyan {
                    pool,
                    inner: rescale(inner, self.n, m).min(pool),
                }
            }
            other => other,
        }
    }

    /// Aggregates one round. `center` is the previous round's aggregate
    /// (used by centred clipping); `seed` drives the bucket shuffle.
    pub fn aggregate(
        &self,
        g: &GradientMatrix,
        center: Option<&[f64]>,
        seed: u64,
        exec: Execution,
    ) -> Result<Vec<f64>> {
        if g.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: g.n(),
            });
        }
        if self.bucketing > 1 {
            let buckets = bucket_means(g, self.bucketing, seed)?;
            if buckets.n() == 1 {
                return Ok(buckets.columns[0].clone());
            }
            return apply_rule(&self.bucketed_rule(), &buckets, center, exec);
        }
        apply_rule(&self.rule, g, center, exec)
    }
}

fn apply_rule(rule: &ResolvedRule, g: &GradientMatrix, center: Option<&[f64]>, exec: Execution) -> Result<Vec<f64>> {
    match *rule {
        ResolvedRule::Fedavg => Ok(fedavg(g)),
        ResolvedRule::Krum { retained } => krum_with(g, retained, exec),
        ResolvedRule::TrimmedMean { trim_fraction } => trimmed_mean_with(g, trim_fraction, exec),
        ResolvedRule::Cwmed => Ok(coordinate_median_with(g, exec)),
        ResolvedRule::Bulyan { pool, inner } => bulyan_with(g, pool, inner, exec),
        ResolvedRule::Cclip { tau, iters } => cclip(g, tau, iters, center),
        ResolvedRule::Rfa { nu, iters } => rfa(g, nu, iters),
        ResolvedRule::Huber { tau } => huber(g, tau),
    }
}

/// Bucketing wrapper around `inner`.
pub fn bucketing(
    g: &GradientMatrix,
    factor: usize,
    inner: &Resolved,
    seed: u64,
    center: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let wrapped = Resolved {
        bucketing: factor,
        ..*inner
    };
    wrapped.validate()?;
    wrapped.aggregate(g, center, seed, Execution::Sequential)
}
