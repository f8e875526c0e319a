//! Independent reference implementations used as test oracles. None of
//! them share code paths with the library beyond plain data types.

#![allow(dead_code)]

use fedlaw_core::adversary::AttackSpec;
use fedlaw_core::aggregators::{AggregatorRule, AggregatorSpec, HUBER_MAX_ITERS, HUBER_TOL};
use fedlaw_core::engine::{BetaSchedule, EngineConfig, Method};
use fedlaw_core::experiment::{DatasetSpec, ExperimentConfig, ModelConfig, PartitionConfig};
use fedlaw_core::models::{Batch, Model};
use fedlaw_core::Execution;

/// Projection onto `{0 <= w <= t, sum w = 1}` by bisection on the shift
/// `tau` in `w_i = clamp(y_i - tau, 0, t)`. Requires `len * t >= 1`.
pub fn bisection_capped_projection(y: &[f64], t: f64) -> Vec<f64> {
    let mass = |tau: f64| y.iter().map(|v| (v - tau).clamp(0.0, t)).sum::<f64>();
    let lo0 = y.iter().cloned().fold(f64::INFINITY, f64::min) - t - 1.0;
    let hi0 = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    y.iter().map(|v| (v - tau).clamp(0.0, t)).collect()
}

/// Dense capped projection by enumerating all `3^n` zero/free/capped
/// patterns and keeping the closest KKT-feasible candidate.
pub fn kkt_pattern_projection(y: &[f64], t: f64) -> Vec<f64> {
    let n = y.len();
    let tol = 1e-9;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let pattern: Vec<usize> = (0..n)
            .map(|_| {
                let p = c % 3;
                c /= 3;
                p
            })
            .collect();
        let capped = pattern.iter().filter(|&&p| p == 2).count();
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 1).collect();
        let remaining = 1.0 - capped as f64 * t;
        let w: Vec<f64>;
        let tau;
        if free.is_empty() {
            if remaining.abs() > tol {
                continue;
            }
            w = pattern.iter().map(|&p| if p == 2 { t } else { 0.0 }).collect();
            // Any tau between the zero block's max and the capped block's min.
            let zmax = (0..n)
                .filter(|&i| pattern[i] == 0)
                .map(|i| y[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let cmin = (0..n)
                .filter(|&i| pattern[i] == 2)
                .map(|i| y[i] - t)
                .fold(f64::INFINITY, f64::min);
            if zmax > cmin + tol {
                continue;
            }
            tau = if zmax.is_finite() { zmax } else { cmin };
        } else {
            tau = (free.iter().map(|&i| y[i]).sum::<f64>() - remaining) / free.len() as f64;
            w = (0..n)
                .map(|i| match pattern[i] {
                    0 => 0.0,
                    1 => y[i] - tau,
                    _ => t,
                })
                .collect();
        }
        let ok = (0..n).all(|i| match pattern[i] {
            0 => y[i] - tau <= tol,
            1 => w[i] >= -tol && w[i] <= t + tol,
            _ => y[i] - tau >= t - tol,
        });
        if !ok {
            continue;
        }
        let d = dist2(&w, y);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, w));
        }
    }
    best.expect("feasible instance has a KKT point").1
}

/// Sparse capped projection by exhaustive support enumeration: every
/// support of size at most `s` that can hold unit mass, projected densely
/// with [`bisection_capped_projection`]. Returns `(squared distance, w)`.
pub fn support_enumeration_projection(h: &[f64], s: usize, t: f64) -> (f64, Vec<f64>) {
    let n = h.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size > s || (size as f64) * t < 1.0 - 1e-12 {
            continue;
        }
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let sub: Vec<f64> = support.iter().map(|&i| h[i]).collect();
        let proj = bisection_capped_projection(&sub, t);
        let mut w = vec![0.0; n];
        for (&i, v) in support.iter().zip(proj) {
            w[i] = v;
        }
        let d = dist2(&w, h);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, w));
        }
    }
    best.expect("feasible spec has a support")
}

/// LP optimum of `sum w_i f_i` over the sparse capped simplex by
/// enumerating its vertices: `k` entries at `t` plus at most one remainder.
pub fn lp_vertex_enumeration(f: &[f64], s: usize, t: f64) -> f64 {
    let n = f.len();
    let k = (1.0 / t + 1e-9).floor() as usize;
    let r = (1.0 - k as f64 * t).max(0.0);
    let r = if r < 1e-9 { 0.0 } else { r };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let base: f64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| t * f[i]).sum();
        if r == 0.0 {
            if k <= s {
                best = best.min(base);
            }
            continue;
        }
        if k + 1 > s {
            continue;
        }
        for j in (0..n).filter(|&j| mask & (1 << j) == 0) {
            best = best.min(base + r * f[j]);
        }
    }
    best
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite-difference gradient of the mean loss.
pub fn finite_difference_gradient(model: &Model, theta: &[f64], batch: &Batch<'_>, step: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + step;
            let up = model.loss(&probe, batch).unwrap();
            probe[i] = theta[i] - step;
            let down = model.loss(&probe, batch).unwrap();
            probe[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// All `k`-subsets of `items`.
pub fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for (pos, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[pos + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Krum score by brute force: the smallest sum of squared distances to any
/// `neighbors` other candidates.
pub fn brute_krum_score(cols: &[Vec<f64>], candidates: &[usize], i: usize, neighbors: usize) -> f64 {
    let others: Vec<usize> = candidates.iter().copied().filter(|&j| j != i).collect();
    combinations(&others, neighbors)
        .iter()
        .map(|set| set.iter().map(|&j| dist2(&cols[i], &cols[j])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Index (into `candidates`) of the smallest score, lowest id on ties.
pub fn argmin_by_score(candidates: &[usize], scores: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..candidates.len() {
        if scores[k] < scores[best] || (scores[k] == scores[best] && candidates[k] < candidates[best]) {
            best = k;
        }
    }
    best
}

pub fn column_mean(cols: &[Vec<f64>], chosen: &[usize]) -> Vec<f64> {
    let d = cols[0].len();
    (0..d)
        .map(|j| chosen.iter().map(|&i| cols[i][j]).sum::<f64>() / chosen.len() as f64)
        .collect()
}

/// Median by rank counting: the element(s) with at most half the sample on
/// either side.
pub fn rank_median(values: &[f64]) -> f64 {
    let n = values.len();
    let kth = |k: usize| {
        *values
            .iter()
            .enumerate()
            .find(|&(i, &v)| {
                let below = values
                    .iter()
                    .enumerate()
                    .filter(|&(j, &u)| u < v || (u == v && j < i))
                    .count();
                below == k
            })
            .unwrap()
            .1
    };
    if n % 2 == 1 {
        kth(n / 2)
    } else {
        0.5 * (kth(n / 2 - 1) + kth(n / 2))
    }
}

/// Trimmed mean by repeatedly deleting the current extremes.
pub fn peel_trimmed_mean(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    for _ in 0..k {
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &x)| if x > a.1 { (i, x) } else { a });
        v.remove(imax);
        let (imin, _) = v
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |a, (i, &x)| if x < a.1 { (i, x) } else { a });
        v.remove(imin);
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}: entry {i}: {x} vs {y} (tol {tol})");
    }
}

pub const CANONICAL_CLASSES: usize = 5;

/// The canonical inverse-gradient scenario: 10 clients, 4 attackers placed
/// group-oriented, synthetic blobs, `s = 6`, `t = 1/6`, `alpha = 0.01`,
/// `beta = 0.01`, 100 epochs.
pub fn canonical_config(method: Method, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            num_classes: CANONICAL_CLASSES,
            dim: 20,
            per_class: 400,
            spread: 0.3,
        },
        partition: PartitionConfig { n_clients: 10, q: 0.5 },
        attack: AttackSpec::InverseGradient,
        malicious_fraction: 0.4,
        model: ModelConfig::default(),
        engine: EngineConfig {
            alpha: 0.01,
            beta: BetaSchedule::Fixed { value: 1e-2 },
            epochs: 100,
            local_epochs: 1,
            batch_size: 1,
            s: Some(6),
            t: Some(1.0 / 6.0),
            weight_update_rounds: None,
            clip_radius: None,
            method,
            seed: 0,
            execution: Execution::Sequential,
        },
        repeats: 1,
        seed,
        output_dir: None,
    }
}

pub fn fedavg() -> Method {
    Method::Baseline {
        aggregator: AggregatorSpec::plain(AggregatorRule::Fedavg),
    }
}

/// Multi-Krum by brute-force neighbour sets, ids removed greedily.
pub fn krum_oracle(cols: &[Vec<f64>], retained: usize) -> Vec<f64> {
    let n = cols.len();
    let b_f = n.saturating_sub(retained + 2);
    let neighbors = n - b_f - 2;
    let all: Vec<usize> = (0..n).collect();
    let mut scores: Vec<f64> = all
        .iter()
        .map(|&i| brute_krum_score(cols, &all, i, neighbors))
        .collect();
    let mut remaining = all.clone();
    let mut chosen = Vec::new();
    for _ in 0..retained {
        let k = argmin_by_score(&remaining, &scores);
        chosen.push(remaining.remove(k));
        scores.remove(k);
    }
    chosen.sort_unstable();
    column_mean(cols, &chosen)
}

/// Bulyan traced step by step: Krum pool selection, then a per-coordinate
/// average of the values closest to the pool median.
pub fn bulyan_oracle(cols: &[Vec<f64>], pool_size: usize, inner: usize) -> Vec<f64> {
    let n = cols.len();
    let f = n.saturating_sub(inner + 2);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut pool = Vec::new();
    while pool.len() < pool_size {
        let m = remaining.len();
        let pick = if m == 1 {
            0
        } else {
            let neighbors = m.saturating_sub(f + 2).clamp(1, m - 1);
            let scores: Vec<f64> = remaining
                .iter()
                .map(|&i| brute_krum_score(cols, &remaining, i, neighbors))
                .collect();
            argmin_by_score(&remaining, &scores)
        };
        pool.push(remaining.remove(pick));
    }
    pool.sort_unstable();
    let d = cols[0].len();
    (0..d)
        .map(|j| {
            let values: Vec<f64> = pool.iter().map(|&i| cols[i][j]).collect();
            let med = rank_median(&values);
            let mut left: Vec<usize> = (0..values.len()).collect();
            let mut total = 0.0;
            for _ in 0..inner {
                let mut best = 0;
                for k in 1..left.len() {
                    if (values[left[k]] - med).abs() < (values[left[best]] - med).abs() {
                        best = k;
                    }
                }
                total += values[left.remove(best)];
            }
            total / inner as f64
        })
        .collect()
}

pub fn weighted(cols: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    (0..cols[0].len())
        .map(|j| cols.iter().zip(w).map(|(c, wi)| wi * c[j]).sum::<f64>() / total)
        .collect()
}

pub fn rfa_oracle(cols: &[Vec<f64>], nu: f64, iters: usize) -> Vec<f64> {
    let mut c = column_mean(cols, &(0..cols.len()).collect::<Vec<_>>());
    for _ in 0..iters {
        let w: Vec<f64> = cols.iter().map(|g| 1.0 / dist2(g, &c).sqrt().max(nu)).collect();
        c = weighted(cols, &w);
    }
    c
}

pub fn huber_oracle(cols: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let mut c = column_mean(cols, &(0..cols.len()).collect::<Vec<_>>());
    let spread = cols.iter().map(|g| dist2(g, &c).sqrt()).fold(0.0, f64::max);
    for _ in 0..HUBER_MAX_ITERS {
        let w: Vec<f64> = cols.iter().map(|g| (tau / dist2(g, &c).sqrt()).min(1.0)).collect();
        let next = weighted(cols, &w);
        let moved = dist2(&next, &c).sqrt();
        c = next;
        if moved <= HUBER_TOL * spread {
            break;
        }
    }
    c
}

pub fn cclip_oracle(cols: &[Vec<f64>], tau: f64, iters: usize, center: &[f64]) -> Vec<f64> {
    let mut c = center.to_vec();
    for _ in 0..iters {
        let n = cols.len() as f64;
        let mut next = c.clone();
        for g in cols {
            let r = dist2(g, &c).sqrt();
            let scale = if r > tau { tau / r } else { 1.0 };
            for j in 0..c.len() {
                next[j] += scale * (g[j] - c[j]) / n;
            }
        }
        c = next;
    }
    c
}
