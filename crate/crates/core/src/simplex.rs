//! Euclidean projections onto the unit-capped simplex
//! `{w : sum w = 1, 0 <= w_i <= t}` and its sparse variant
//! `{w : sum w = 1, 0 <= w_i <= t, ||w||_0 <= s}`.
//!
//! The dense projection is the sorted prefix-sum KKT search of Wang & Lu:
//! after sorting, the solution has the form `[0.., y_j + t*gamma.., t..]`,
//! and the search scans the break indices `(a, b)` between the zero block,
//! the free block and the capped block. The sparse projection keeps the `s`
//! largest entries and projects that sub-vector densely.
//!
//! All arithmetic here is `f64` regardless of model precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(w) == 1`.
pub const SUM_TOL: f64 = 1e-9;
/// Absolute tolerance on `0 <= w_i <= t`.
pub const CAP_TOL: f64 = 1e-12;
/// Slack on `s * t >= 1`. A cap within this distance below `1/s` is snapped
/// to `1/s` so user-entered values like `0.3333333333` stay feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Slack used in the KKT break-index conditions.
const KKT_SLACK: f64 = 1e-12;

/// Parameters `(n, s, t)` of the sparse unit-capped simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexSpec {
    n: usize,
    s: usize,
    t: f64,
}

impl SimplexSpec {
    /// Validates `1 <= s <= n` and `0 < t <= 1`. Feasibility (`s * t >= 1`)
    /// is not required here; query it with [`SimplexSpec::feasible`].
    pub fn new(n: usize, s: usize, t: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("simplex dimension n must be positive".into()));
        }
        if s == 0 || s > n {
            return Err(Error::Domain(format!("sparsity s = {s} outside 1..={n}")));
        }
        if !t.is_finite() || t <= 0.0 || t > 1.0 {
            return Err(Error::Domain(format!("cap t = {t} outside (0, 1]")));
        }
        let st = s as f64 * t;
        let t = if (1.0 - FEASIBILITY_TOL..1.0).contains(&st) {
            1.0 / s as f64
        } else {
            t
        };
        Ok(Self { n, s, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// The set is nonempty iff `s * t >= 1`.
    pub fn feasible(&self) -> bool {
        self.s as f64 * self.t >= 1.0 - FEASIBILITY_TOL
    }

    fn require_feasible(&self) -> Result<()> {
        if self.feasible() {
            Ok(())
        } else {
            Err(Error::Infeasible(format!("s * t = {} * {} < 1", self.s, self.t)))
        }
    }
}

/// Aggregation weights, one per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|&&w| w != 0.0).count()
    }

    /// Checks length, sum, cap and sparsity against `spec`.
    pub fn check(&self, spec: &SimplexSpec) -> Result<()> {
        if self.0.len() != spec.n {
            return Err(Error::DimensionMismatch {
                expected: spec.n,
                actual: self.0.len(),
            });
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}")));
        }
        if let Some((i, w)) = self
            .0
            .iter()
            .enumerate()
            .find(|(_, &w)| !(w >= -CAP_TOL && w <= spec.t + CAP_TOL))
        {
            return Err(Error::Domain(format!("weight {i} = {w} outside [0, {}]", spec.t)));
        }
        if self.nnz() > spec.s {
            return Err(Error::Domain(format!(
                "{} nonzero weights exceed sparsity {}",
                self.nnz(),
                spec.s
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Splits the unit mass into `k` full caps plus a remainder: `k = floor(1/t)`,
/// `r = 1 - k t`. When `1/t` is an integer up to `1e-9` the remainder is
/// exactly zero.
pub fn cap_decomposition(t: f64) -> (usize, f64) {
    let inv = 1.0 / t;
    let rounded = inv.round();
    if (inv - rounded).abs() <= 1e-9 {
        (rounded as usize, 0.0)
    } else {
        let k = inv.floor();
        (k as usize, (1.0 - k * t).max(0.0))
    }
}

fn check_finite(y: &[f64]) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Domain(format!("non-finite input at index {i}"))),
        None => Ok(()),
    }
}

/// Projects `y` onto `{x : sum x = 1, 0 <= x_i <= t}`.
pub fn project_capped_simplex(y: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Domain("cannot project an empty vector".into()));
    }
    if !t.is_finite() || t <= 0.0 || t > 1.0 {
        return Err(Error::Domain(format!("cap t = {t} outside (0, 1]")));
    }
    check_finite(y)?;
    let nt = n as f64 * t;
    if nt < 1.0 - FEASIBILITY_TOL {
        return Err(Error::Infeasible(format!("n * t = {n} * {t} < 1")));
    }
    if nt <= 1.0 + FEASIBILITY_TOL {
        // The uniform vector is the only feasible point.
        return Ok(vec![1.0 / n as f64; n]);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let x_sorted = kkt_break_search(&sorted, t).unwrap_or_else(|| bisect_shift(&sorted, t));

    let mut x = vec![0.0; n];
    for (j, &i) in order.iter().enumerate() {
        x[i] = x_sorted[j];
    }
    Ok(x)
}

/// Scans break indices over ascending `y`. In 1-based notation `y_0 = -inf`
/// and `y_{n+1} = +inf`; those sentinels are handled as explicit branches.
fn kkt_break_search(y: &[f64], t: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let inv_t = 1.0 / t;
    let z: Vec<f64> = y.iter().map(|v| v / t).collect();
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + z[k];
    }
    // z_j in 1-based notation.
    let zj = |j: usize| z[j - 1];

    for a in 0..=n {
        let all_capped = (inv_t - (n - a) as f64).abs() <= 1e-9 * inv_t.max(1.0);
        if all_capped && a < n && (a == 0 || y[a] - y[a - 1] >= t) {
            let mut x = vec![t; n];
            x[..a].iter_mut().for_each(|v| *v = 0.0);
            return Some(x);
        }
        for b in a + 1..=n {
            let gamma = (inv_t + b as f64 - n as f64 + prefix[a] - prefix[b]) / (b - a) as f64;
            let low_ok = a == 0 || zj(a) + gamma <= KKT_SLACK;
            let first_free_ok = zj(a + 1) + gamma > -KKT_SLACK;
            let last_free_ok = zj(b) + gamma < 1.0 + KKT_SLACK;
            let high_ok = b == n || zj(b + 1) + gamma >= 1.0 - KKT_SLACK;
            if low_ok && first_free_ok && last_free_ok && high_ok {
                let x = (0..n)
                    .map(|k| {
                        if k < a {
                            0.0
                        } else if k < b {
                            (y[k] + t * gamma).clamp(0.0, t)
                        } else {
                            t
                        }
                    })
                    .collect();
                return Some(x);
            }
        }
    }
    None
}

/// Fallback when round-off leaves no break pair satisfying the KKT tests:
/// solve `sum clamp(y_i + shift, 0, t) = 1` for the shift by bisection.
fn bisect_shift(y: &[f64], t: f64) -> Vec<f64> {
    let mass = |shift: f64| y.iter().map(|v| (v + shift).clamp(0.0, t)).sum::<f64>();
    let lo_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (-hi_y, t - lo_y);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    y.iter().map(|v| (v + shift).clamp(0.0, t)).collect()
}

/// Keeps the `s` largest entries of `h` by value (not magnitude) and zeroes
/// the rest. Ties go to the lowest index. The returned support is sorted.
pub fn top_s(h: &[f64], s: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if s == 0 || s > h.len() {
        return Err(Error::Domain(format!(
            "top-s with s = {s} on a vector of length {}",
            h.len()
        )));
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    let mut support = order[..s].to_vec();
    support.sort_unstable();
    let mut values = vec![0.0; h.len()];
    for &i in &support {
        values[i] = h[i];
    }
    Ok((values, support))
}

/// Projects `h` onto the sparse unit-capped simplex: top-`s` by value, then
/// the dense capped projection on that support, zero elsewhere.
pub fn project_sparse_capped_simplex(h: &[f64], spec: &SimplexSpec) -> Result<WeightVector> {
    if h.len() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            actual: h.len(),
        });
    }
    check_finite(h)?;
    spec.require_feasible()?;
    let (_, support) = top_s(h, spec.s)?;
    let restricted: Vec<f64> = support.iter().map(|&i| h[i]).collect();
    let projected = project_capped_simplex(&restricted, spec.t)?;
    let mut w = vec![0.0; spec.n];
    for (&i, v) in support.iter().zip(projected) {
        w[i] = v;
    }
    Ok(WeightVector(w))
}

/// Upper bound `sqrt(2 (k t^2 + r^2))` on `||w1 - w2||_2` over the set,
/// with `k = floor(1/t)` and `r = 1 - k t`. Reduces to `sqrt(2 t)` when
/// `1/t` is an integer.
pub fn max_pairwise_distance(spec: &SimplexSpec) -> Result<f64> {
    spec.require_feasible()?;
    let t = spec.t;
    let (k, r) = cap_decomposition(t);
    if r == 0.0 {
        return Ok((2.0 * t).sqrt());
    }
    Ok((2.0 * (k as f64 * t * t + r * r)).sqrt())
}
