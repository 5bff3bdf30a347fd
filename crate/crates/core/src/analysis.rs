//! Persistency and consistency diagnostics.
//!
//! A regressor sequence is persistent with window `N` and lower bound `α` when
//! every window sum `Σ_{i=0..N} φ_{i+j}ᵀ φ_{i+j}` is bounded below by `α I`;
//! its upper bound is the largest eigenvalue over those sums. On a recorded
//! sequence both are finite-horizon estimates over the complete windows
//! available.
//!
//! The consistency sequences
//!
//! ```text
//! s_l[j] = Σ_{i<j} ρ_{i(N+1)}        q_l[j] = Σ_{i<j} ρ²_{i(N+1)}
//! s_u[j] = Σ_{i≤j} ρ_{i(N+1)+N}      q_u[j] = Σ_{i≤j} ρ²_{i(N+1)+N}
//! ```
//!
//! bracket the asymptotic covariance of the estimate. `ρ_k` grows geometrically
//! under constant forgetting, so everything here is held as natural logarithms.

use crate::error::{Error, Result};
use crate::linalg::{sym_eig_extrema, Mat, SymMat};

/// Tolerance for eigenvalue comparisons, scaled by `max(1, max|A|)`.
pub const EIG_TOL: f64 = 1e-10;

/// `⌊k / (N + 1)⌋`, the number of complete windows of length `N + 1` in `k` steps.
pub fn xi(k: usize, window: usize) -> usize {
    k / (window + 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencyProfile {
    /// `N`; windows span `N + 1` consecutive samples.
    pub window: usize,
    pub alpha: f64,
    /// May be `f64::INFINITY` when supplied by hand.
    pub beta_ub: f64,
}

impl PersistencyProfile {
    pub fn new(window: usize, alpha: f64, beta_ub: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(beta_ub >= alpha) {
            return Err(Error::invalid(format!(
                "upper bound {beta_ub} must be at least alpha {alpha}"
            )));
        }
        Ok(Self {
            window,
            alpha,
            beta_ub,
        })
    }
}

fn window_sum(grams: &[SymMat], start: usize, len: usize) -> SymMat {
    grams[start + 1..start + len]
        .iter()
        .fold(grams[start].clone(), |acc, s| acc.add(s))
}

/// Persistency profile of `φ_kᵀ φ_k` for the regressors `phis`.
///
/// Returns the smallest `N ≤ n_max` whose every complete window sum is
/// positive definite, or `None` when no such `N` exists.
pub fn persistency_profile(phis: &[Mat], n_max: usize) -> Result<Option<PersistencyProfile>> {
    if let Some(first) = phis.first() {
        if let Some(bad) = phis
            .iter()
            .find(|p| (p.rows(), p.cols()) != (first.rows(), first.cols()))
        {
            return Err(Error::invalid(format!(
                "regressor shape {}x{} differs from {}x{}",
                bad.rows(),
                bad.cols(),
                first.rows(),
                first.cols()
            )));
        }
    }
    let grams: Vec<SymMat> = phis.iter().map(Mat::gram).collect();
    persistency_profile_gram(&grams, n_max)
}

/// As [`persistency_profile`], on a sequence of positive-semidefinite matrices.
pub fn persistency_profile_gram(
    grams: &[SymMat],
    n_max: usize,
) -> Result<Option<PersistencyProfile>> {
    if grams.len() < n_max + 2 {
        return Err(Error::InsufficientData {
            needed: n_max + 2,
            got: grams.len(),
        });
    }
    let dim = grams[0].dim();
    if grams.iter().any(|g| g.dim() != dim) {
        return Err(Error::invalid(
            "matrices in the sequence differ in dimension",
        ));
    }
    'windows: for n in 0..=n_max {
        let mut alpha = f64::INFINITY;
        let mut beta_ub: f64 = 0.0;
        for start in 0..=grams.len() - (n + 1) {
            let w = window_sum(grams, start, n + 1);
            let (lo, hi) = sym_eig_extrema(&w)?;
            if lo <= EIG_TOL * w.as_mat().max_abs().max(1.0) {
                continue 'windows;
            }
            alpha = alpha.min(lo);
            beta_ub = beta_ub.max(hi);
        }
        return Ok(Some(PersistencyProfile {
            window: n,
            alpha,
            beta_ub,
        }));
    }
    Ok(None)
}

/// `ln ρ_k` for `k = 0, 1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoSequence {
    ln: Vec<f64>,
}

impl RhoSequence {
    /// Accumulates `ln ρ_k = Σ_{i≤k} ln β_i`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let mut ln = Vec::with_capacity(betas.len());
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("beta[{i}] = {b} must be positive")));
            }
            acc += b.ln();
            ln.push(acc);
        }
        Ok(Self { ln })
    }

    pub fn from_rhos(rhos: &[f64]) -> Result<Self> {
        if let Some((i, r)) = rhos.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
            return Err(Error::invalid(format!("rho[{i}] = {r} must be positive")));
        }
        Ok(Self {
            ln: rhos.iter().map(|r| r.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ln.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln.is_empty()
    }

    pub fn ln(&self, k: usize) -> f64 {
        self.ln[k]
    }

    /// `ρ_k`; may overflow to infinity.
    pub fn value(&self, k: usize) -> f64 {
        self.ln[k].exp()
    }
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// The four consistency sequences for `j = 0..=j_max`, stored as logarithms.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySequences {
    pub window: usize,
    ln_s_l: Vec<f64>,
    ln_s_u: Vec<f64>,
    ln_q_l: Vec<f64>,
    ln_q_u: Vec<f64>,
}

impl ConsistencySequences {
    pub fn j_max(&self) -> usize {
        self.ln_s_l.len() - 1
    }

    pub fn s_l(&self, j: usize) -> f64 {
        self.ln_s_l[j].exp()
    }

    pub fn s_u(&self, j: usize) -> f64 {
        self.ln_s_u[j].exp()
    }

    pub fn q_l(&self, j: usize) -> f64 {
        self.ln_q_l[j].exp()
    }

    pub fn q_u(&self, j: usize) -> f64 {
        self.ln_q_u[j].exp()
    }

    pub fn ln_s_l(&self, j: usize) -> f64 {
        self.ln_s_l[j]
    }

    pub fn ln_s_u(&self, j: usize) -> f64 {
        self.ln_s_u[j]
    }

    pub fn ln_q_l(&self, j: usize) -> f64 {
        self.ln_q_l[j]
    }

    pub fn ln_q_u(&self, j: usize) -> f64 {
        self.ln_q_u[j]
    }

    /// `q_u[j] / s_l[j]²`, infinite at `j = 0`.
    pub fn upper_ratio(&self, j: usize) -> f64 {
        (self.ln_q_u[j] - 2.0 * self.ln_s_l[j]).exp()
    }

    /// `q_l[j] / s_u[j]²`.
    pub fn lower_ratio(&self, j: usize) -> f64 {
        (self.ln_q_l[j] - 2.0 * self.ln_s_u[j]).exp()
    }
}

/// Largest `j` for which `ρ_{j(N+1)+N}` lies within a record of `len` products.
pub fn max_complete_windows(len: usize, window: usize) -> Option<usize> {
    (len > window).then(|| (len - 1 - window) / (window + 1))
}

pub fn consistency_sequences(
    rhos: &RhoSequence,
    window: usize,
    j_max: usize,
) -> Result<ConsistencySequences> {
    let needed = j_max * (window + 1) + window + 1;
    if rhos.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: rhos.len(),
        });
    }
    let stride = window + 1;
    let mut out = ConsistencySequences {
        window,
        ln_s_l: Vec::with_capacity(j_max + 1),
        ln_s_u: Vec::with_capacity(j_max + 1),
        ln_q_l: Vec::with_capacity(j_max + 1),
        ln_q_u: Vec::with_capacity(j_max + 1),
    };
    let (mut s_l, mut q_l) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut s_u, mut q_u) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for j in 0..=j_max {
        // s_l, q_l sum i < j; s_u, q_u sum i ≤ j.
        if j > 0 {
            let head = rhos.ln((j - 1) * stride);
            s_l = ln_add(s_l, head);
            q_l = ln_add(q_l, 2.0 * head);
        }
        let tail = rhos.ln(j * stride + window);
        s_u = ln_add(s_u, tail);
        q_u = ln_add(q_u, 2.0 * tail);
        out.ln_s_l.push(s_l);
        out.ln_s_u.push(s_u);
        out.ln_q_l.push(q_l);
        out.ln_q_u.push(q_u);
    }
    Ok(out)
}

/// Ratio arrays starting at `j = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRatios {
    pub j: Vec<usize>,
    /// `q_u[j] / s_l[j]²`; tending to 0 suffices for consistency.
    pub upper: Vec<f64>,
    /// `q_l[j] / s_u[j]²`; tending to 0 is necessary for consistency.
    pub lower: Vec<f64>,
}

pub fn consistency_ratios(seq: &ConsistencySequences) -> ConsistencyRatios {
    let j: Vec<usize> = (1..=seq.j_max()).collect();
    ConsistencyRatios {
        upper: j.iter().map(|&j| seq.upper_ratio(j)).collect(),
        lower: j.iter().map(|&j| seq.lower_ratio(j)).collect(),
        j,
    }
}

/// Whether the upper ratio is still heading to zero over the final quarter of
/// the record: nonincreasing there, with a log-log slope of at most -1/2.
///
/// `None` when fewer than 8 ratios are available.
pub fn upper_ratio_trends_to_zero(ratios: &ConsistencyRatios) -> Option<bool> {
    let m = ratios.upper.len();
    if m < 8 {
        return None;
    }
    let start = m - m / 4 - 1;
    let tail = &ratios.upper[start..];
    let js = &ratios.j[start..];
    if tail.windows(2).any(|w| w[1] > w[0]) {
        return Some(false);
    }
    let (x0, x1) = ((js[0] as f64).ln(), (js[js.len() - 1] as f64).ln());
    let (y0, y1) = (tail[0].ln(), tail[tail.len() - 1].ln());
    Some((y1 - y0) / (x1 - x0) <= -0.5)
}

/// Limit of `q_l[j] / s_u[j]²` under constant `β_k = γ > 1`, i.e. `ρ_i = γ^{i+1}`:
///
/// ```text
/// (γ^{N+1} − 1) / ((γ^{N+1} + 1) γ^{4N+2})
/// ```
pub fn geometric_ratio_limit(gamma: f64, window: usize) -> Result<f64> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must exceed 1, got {gamma}")));
    }
    let g = gamma.powi(window as i32 + 1);
    Ok((g - 1.0) / ((g + 1.0) * gamma.powi(4 * window as i32 + 2)))
}

/// Bracket on the eigenvalues of `var(θ_k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Evaluates the covariance eigenvalue bracket at step `k`:
///
/// ```text
/// lower = α λ_min(V) / β² · q_l[ξ] / s_u[ξ]²
/// upper = β λ_max(V) / α² · q_u[ξ] / s_l[ξ]²,   ξ = ⌊k/(N+1)⌋
/// ```
///
/// The bracket is a statement about the tails of these sequences; at finite
/// `k` the values are diagnostics only.
pub fn variance_bounds(
    profile: &PersistencyProfile,
    v_min: f64,
    v_max: f64,
    seq: &ConsistencySequences,
    k: usize,
) -> Result<VarianceBounds> {
    if !profile.beta_ub.is_finite() {
        return Err(Error::invalid(
            "variance bounds need a finite persistency upper bound",
        ));
    }
    if profile.window != seq.window {
        return Err(Error::invalid(format!(
            "profile window {} differs from sequence window {}",
            profile.window, seq.window
        )));
    }
    if !(0.0 <= v_min && v_min <= v_max && v_max.is_finite()) {
        return Err(Error::invalid(format!(
            "noise eigenvalues must satisfy 0 <= {v_min} <= {v_max}"
        )));
    }
    let j = xi(k, profile.window);
    if j == 0 {
        return Err(Error::invalid(format!(
            "step {k} holds no complete window of length {}",
            profile.window + 1
        )));
    }
    if j > seq.j_max() {
        return Err(Error::InsufficientData {
            needed: j + 1,
            got: seq.j_max() + 1,
        });
    }
    let (alpha, beta) = (profile.alpha, profile.beta_ub);
    Ok(VarianceBounds {
        lower: alpha * v_min / (beta * beta) * seq.lower_ratio(j),
        upper: beta * v_max / (alpha * alpha) * seq.upper_ratio(j),
    })
}

/// Checks `α ℓ_{ξ(k)−1} I ≤ Σ_{i≤k} a_i S_i ≤ β r_{ξ(k)} I` for every `k` whose
/// right-hand index `ξ(k)(N+1)+N` lies inside the record, where
/// `ℓ_j = Σ_{i≤j} a_{i(N+1)}` and `r_j = Σ_{i≤j} a_{i(N+1)+N}`.
pub fn sum_bounds_check(s: &[SymMat], a: &[f64], profile: &PersistencyProfile) -> Result<bool> {
    if s.len() != a.len() {
        return Err(Error::DimensionMismatch {
            context: "weight sequence length",
            expected: s.len(),
            got: a.len(),
        });
    }
    if s.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let dim = s[0].dim();
    if s.iter().any(|m| m.dim() != dim) {
        return Err(Error::invalid(
            "matrices in the sequence differ in dimension",
        ));
    }
    if a.iter().any(|v| !(*v >= 0.0)) || a.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "weights must be nonnegative and nondecreasing",
        ));
    }
    let n = profile.window;
    let stride = n + 1;
    let ell = |j: usize| (0..=j).map(|i| a[i * stride]).sum::<f64>();
    let r = |j: usize| (0..=j).map(|i| a[i * stride + n]).sum::<f64>();
    let id = SymMat::identity(dim);
    let mut acc = SymMat::zeros(dim);
    for k in 0..s.len() {
        acc = acc.add(&s[k].scaled(a[k]));
        let x = xi(k, n);
        if x * stride + n >= s.len() {
            break;
        }
        let tol = EIG_TOL * acc.as_mat().max_abs().max(1.0);
        let lower = if x == 0 {
            0.0
        } else {
            profile.alpha * ell(x - 1)
        };
        if sym_eig_extrema(&acc.sub(&id.scaled(lower)))?.0 < -tol {
            return Ok(false);
        }
        if profile.beta_ub.is_finite() {
            let upper = profile.beta_ub * r(x);
            if sym_eig_extrema(&acc.sub(&id.scaled(upper)))?.1 > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
