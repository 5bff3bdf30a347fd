//! Recursive least squares with variable-rate forgetting.
//!
//! After consuming `(φ_i, y_i, β_i)` for `i = 0..=k`, the estimate `θ_{k+1}`
//! is the unique minimizer of
//!
//! ```text
//! J_k(θ) = Σ_{i=0..k} (ρ_i/ρ_k) ‖y_i − φ_i θ‖² + (1/ρ_k) (θ − θ_0)ᵀ P_0⁻¹ (θ − θ_0),
//! ρ_k = β_0 ⋯ β_k.
//! ```
//!
//! [`step`] computes it recursively in covariance form; [`batch_minimize`]
//! solves the normal equations directly and is used as a cross-check.

use crate::error::{Error, Result};
use crate::linalg::{inv_spd, solve_spd, solve_spd_vec, Mat, SpdMat, SymMat};

/// Default number of steps between positive-definiteness certifications of `P`.
pub const DEFAULT_CERTIFY_INTERVAL: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub theta0: Vec<f64>,
    pub p0: SpdMat,
    /// Rows of each regressor.
    pub outputs: usize,
}

impl EstimatorConfig {
    pub fn new(theta0: Vec<f64>, p0: SpdMat, outputs: usize) -> Result<Self> {
        let cfg = Self {
            theta0,
            p0,
            outputs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta0.is_empty() {
            return Err(Error::invalid("theta0 must have at least one entry"));
        }
        if self.outputs == 0 {
            return Err(Error::invalid("output count must be at least 1"));
        }
        if self.theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta0 entries must be finite"));
        }
        if self.p0.dim() != self.theta0.len() {
            return Err(Error::DimensionMismatch {
                context: "P0 dimension",
                expected: self.theta0.len(),
                got: self.p0.dim(),
            });
        }
        Ok(())
    }
}

/// Live recursion state at step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    pub k: usize,
    pub theta: Vec<f64>,
    pub p: SpdMat,
    /// `ρ_{k−1}`; equals 1 before any step.
    pub rho_prev: f64,
}

/// One sample: regressor `φ_k` (p x n), measurement `y_k` and `β_k > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub phi: Mat,
    pub y: Vec<f64>,
    pub beta: f64,
}

impl StepInput {
    pub fn new(phi: Mat, y: Vec<f64>, beta: f64) -> Self {
        Self { phi, y, beta }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.phi.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "regressor columns",
                expected: n,
                got: self.phi.cols(),
            });
        }
        if self.y.len() != self.phi.rows() {
            return Err(Error::DimensionMismatch {
                context: "measurement length",
                expected: self.phi.rows(),
                got: self.y.len(),
            });
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta must be finite and positive, got {}",
                self.beta
            )));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measurement entries must be finite"));
        }
        Ok(())
    }
}

pub fn init(config: &EstimatorConfig) -> Result<EstimatorState> {
    config.validate()?;
    Ok(EstimatorState {
        k: 0,
        theta: config.theta0.clone(),
        p: config.p0.clone(),
        rho_prev: 1.0,
    })
}

/// `y − φ θ`.
pub fn residual(phi: &Mat, y: &[f64], theta: &[f64]) -> Vec<f64> {
    phi.matvec(theta)
        .iter()
        .zip(y)
        .map(|(pred, obs)| obs - pred)
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One VRF update with the default certification interval.
pub fn step(state: &EstimatorState, input: &StepInput) -> Result<EstimatorState> {
    step_with_interval(state, input, DEFAULT_CERTIFY_INTERVAL)
}

/// One VRF update:
///
/// ```text
/// L     = β_k P_k
/// P_k+1 = L − L φᵀ (I_p + φ L φᵀ)⁻¹ φ L
/// θ_k+1 = θ_k + P_k+1 φᵀ (y_k − φ θ_k)
/// ```
///
/// `P` is symmetrized every step and eigen-certified whenever the new step
/// index is a multiple of `certify_every` (0 disables certification).
pub fn step_with_interval(
    state: &EstimatorState,
    input: &StepInput,
    certify_every: usize,
) -> Result<EstimatorState> {
    let n = state.theta.len();
    input.check(n)?;
    let phi = &input.phi;
    let p = phi.rows();

    let l = state.p.as_mat().scaled(input.beta);
    // K = L φᵀ (n x p); innovation covariance S = I + φ K.
    let gain = l.matmul(&phi.transpose());
    // S is SPD in exact arithmetic; a Cholesky breakdown here surfaces as Degenerate.
    let innovation =
        SpdMat::new_unchecked(SymMat::symmetrize(Mat::identity(p).add(&phi.matmul(&gain))));
    // S⁻¹ Kᵀ (p x n)
    let s_inv_gain_t = solve_spd(&innovation, &gain.transpose())?;
    let p_next = SymMat::symmetrize(l.sub(&gain.matmul(&s_inv_gain_t)));
    if !p_next.as_mat().is_finite() {
        return Err(Error::Degenerate {
            pivot: 0,
            value: f64::NAN,
        });
    }

    let k_next = state.k + 1;
    let p_next = if certify_every > 0 && k_next.is_multiple_of(certify_every) {
        SpdMat::new(p_next)?
    } else {
        SpdMat::new_unchecked(p_next)
    };

    let e = residual(phi, &input.y, &state.theta);
    let correction = p_next.as_mat().matvec(&phi.tr_matvec(&e));
    let theta = state
        .theta
        .iter()
        .zip(&correction)
        .map(|(t, c)| t + c)
        .collect();

    Ok(EstimatorState {
        k: k_next,
        theta,
        p: p_next,
        rho_prev: state.rho_prev * input.beta,
    })
}

/// Classical constant-rate update; identical to [`step`] with `β = 1/λ`.
pub fn crf_step(
    state: &EstimatorState,
    phi: &Mat,
    y: &[f64],
    lambda: f64,
) -> Result<EstimatorState> {
    let beta = crate::forgetting::beta_constant(lambda)?;
    step(state, &StepInput::new(phi.clone(), y.to_vec(), beta))
}

/// Recorded samples, needed only for the batch cost and oracle routines.
#[derive(Clone, Debug)]
pub struct History {
    config: EstimatorConfig,
    entries: Vec<StepInput>,
}

/// `A_k`, `b_k`, `c_k` and `ρ_k` of the quadratic form `θᵀAθ − 2bᵀθ + c`.
#[derive(Clone, Debug)]
pub struct BatchAccumulator {
    pub a: SpdMat,
    pub b: Vec<f64>,
    pub c: f64,
    pub rho: f64,
}

impl History {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            entries: Vec::new(),
        })
    }

    pub fn push(&mut self, input: StepInput) -> Result<()> {
        input.check(self.config.params())?;
        if input.phi.rows() != self.config.outputs {
            return Err(Error::DimensionMismatch {
                context: "regressor rows",
                expected: self.config.outputs,
                got: input.phi.rows(),
            });
        }
        self.entries.push(input);
        Ok(())
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn entries(&self) -> &[StepInput] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(())
    }

    /// `ρ_i / ρ_k` for each entry, formed as trailing products of `1/β` so
    /// that neither ρ overflows on long records.
    fn relative_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.entries.len()];
        let mut acc = 1.0;
        for (i, entry) in self.entries.iter().enumerate().rev() {
            w[i] = acc;
            acc /= entry.beta;
        }
        w
    }

    /// `1 / ρ_k`.
    fn inv_rho(&self) -> f64 {
        self.entries.iter().fold(1.0, |acc, e| acc / e.beta)
    }

    pub fn rho(&self) -> f64 {
        self.entries.iter().map(|e| e.beta).product()
    }
}

fn p0_inverse(config: &EstimatorConfig) -> Result<SpdMat> {
    inv_spd(&config.p0)
}

/// The weighted least-squares cost at `theta`, summing `‖y_i − φ_i θ‖²`.
pub fn cost(history: &History, theta: &[f64]) -> Result<f64> {
    history.require_nonempty()?;
    let cfg = history.config();
    if theta.len() != cfg.params() {
        return Err(Error::DimensionMismatch {
            context: "cost parameter vector",
            expected: cfg.params(),
            got: theta.len(),
        });
    }
    let data: f64 = history
        .entries()
        .iter()
        .zip(history.relative_weights())
        .map(|(e, w)| {
            let r = residual(&e.phi, &e.y, theta);
            w * r.iter().map(|v| v * v).sum::<f64>()
        })
        .sum();
    let dev: Vec<f64> = theta
        .iter()
        .zip(&cfg.theta0)
        .map(|(t, t0)| t - t0)
        .collect();
    let prior = p0_inverse(cfg)?.as_sym().quad_form(&dev);
    Ok(data + history.inv_rho() * prior)
}

/// Builds `A_k`, `b_k`, `c_k` and returns the minimizer `A_k⁻¹ b_k`.
pub fn batch_minimize(history: &History) -> Result<(Vec<f64>, BatchAccumulator)> {
    history.require_nonempty()?;
    let cfg = history.config();
    let n = cfg.params();
    let p0_inv = p0_inverse(cfg)?;
    let inv_rho = history.inv_rho();

    let mut a = p0_inv.as_sym().scaled(inv_rho);
    let mut b: Vec<f64> = p0_inv
        .as_mat()
        .matvec(&cfg.theta0)
        .into_iter()
        .map(|v| v * inv_rho)
        .collect();
    let mut c = inv_rho * p0_inv.as_sym().quad_form(&cfg.theta0);
    for (e, w) in history.entries().iter().zip(history.relative_weights()) {
        a = a.add(&e.phi.gram().scaled(w));
        for (bi, v) in b.iter_mut().zip(e.phi.tr_matvec(&e.y)) {
            *bi += w * v;
        }
        c += w * e.y.iter().map(|v| v * v).sum::<f64>();
    }
    debug_assert_eq!(a.dim(), n);
    let a = SpdMat::new_unchecked(a);
    let theta = solve_spd_vec(&a, &b)?;
    Ok((
        theta,
        BatchAccumulator {
            a,
            b,
            c,
            rho: history.rho(),
        },
    ))
}

/// `P_{k+1}⁻¹ = (1/ρ_k)(P_0⁻¹ + Σ ρ_i φ_iᵀ φ_i)`, evaluated as a direct sum.
pub fn pinv_closed_form(history: &History) -> Result<SymMat> {
    history.require_nonempty()?;
    let cfg = history.config();
    let mut acc = p0_inverse(cfg)?.into_sym().scaled(history.inv_rho());
    for (e, w) in history.entries().iter().zip(history.relative_weights()) {
        acc = acc.add(&e.phi.gram().scaled(w));
    }
    Ok(acc)
}
