//! Forgetting-factor policies.
//!
//! Each policy maps a step index and residual data to `β_k`, where `1/β_k` is
//! the instantaneous forgetting factor. Every parametric family here yields
//! `β_k >= 1`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tagged policy family, serialized as `{"kind": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub enum ForgettingPolicy {
    /// Classical RLS with forgetting factor `lambda`, i.e. `β = 1/λ`.
    Constant { lambda: f64 },
    /// `β_k = 1 + η sat_γ(‖y_k − φ_k θ_k‖)`.
    ResidualSaturation { eta: f64, gamma: f64 },
    /// `β_k = 1 + η sat_γ(E_τ)` when the windowed RMS residual `E_τ > 1`, else 1.
    WindowedRms { eta: f64, gamma: f64, tau: usize },
    /// `β_0 = 1`, `β_k = 1 + 1/k`.
    Harmonic {},
    /// `β_k = γ` for all k.
    Geometric { gamma: f64 },
    /// Explicit per-step values; running past the end is an error.
    Schedule { values: Vec<f64> },
}

fn positive_finite(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ForgettingPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ForgettingPolicy::Constant { lambda } => check_lambda(*lambda),
            ForgettingPolicy::ResidualSaturation { eta, gamma } => {
                positive_finite("eta", *eta)?;
                positive_finite("gamma", *gamma)
            }
            ForgettingPolicy::WindowedRms { eta, gamma, tau } => {
                positive_finite("eta", *eta)?;
                positive_finite("gamma", *gamma)?;
                if *tau == 0 {
                    return Err(Error::invalid("tau must be at least 1"));
                }
                Ok(())
            }
            ForgettingPolicy::Harmonic {} => Ok(()),
            ForgettingPolicy::Geometric { gamma } => {
                if *gamma >= 1.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "geometric gamma must be >= 1, got {gamma}"
                    )))
                }
            }
            ForgettingPolicy::Schedule { values } => {
                if values.is_empty() {
                    return Err(Error::invalid("schedule must not be empty"));
                }
                match values.iter().position(|v| !(*v >= 1.0 && v.is_finite())) {
                    Some(i) => Err(Error::invalid(format!(
                        "schedule value {} at index {i} must be finite and >= 1",
                        values[i]
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    /// Whether β_k depends on residuals (and so on the estimate).
    pub fn is_residual_driven(&self) -> bool {
        matches!(
            self,
            ForgettingPolicy::ResidualSaturation { .. } | ForgettingPolicy::WindowedRms { .. }
        )
    }

    /// Starts a stateful evaluator for this policy.
    pub fn start(&self) -> Result<PolicyState> {
        self.validate()?;
        let window = match self {
            ForgettingPolicy::WindowedRms { tau, .. } => Some(ResidualWindow::new(*tau)?),
            _ => None,
        };
        Ok(PolicyState {
            policy: self.clone(),
            window,
        })
    }
}

/// A policy together with the residual window it needs, if any.
#[derive(Clone, Debug)]
pub struct PolicyState {
    policy: ForgettingPolicy,
    window: Option<ResidualWindow>,
}

impl PolicyState {
    pub fn policy(&self) -> &ForgettingPolicy {
        &self.policy
    }

    /// β_k for step `k` given the pre-update residual norm `‖y_k − φ_k θ_k‖`.
    ///
    /// The residual is pushed into the window before the windowed RMS is taken,
    /// so `E_τ` covers the current step.
    pub fn next_beta(&mut self, k: usize, residual_norm: f64) -> Result<f64> {
        if !(residual_norm >= 0.0) {
            return Err(Error::invalid(format!(
                "residual norm must be nonnegative, got {residual_norm}"
            )));
        }
        match &self.policy {
            ForgettingPolicy::Constant { lambda } => beta_constant(*lambda),
            ForgettingPolicy::ResidualSaturation { eta, gamma } => {
                beta_residual_sat(*eta, *gamma, residual_norm)
            }
            ForgettingPolicy::WindowedRms { eta, gamma, .. } => {
                let window = self
                    .window
                    .as_mut()
                    .expect("windowed policy always carries a window");
                window.push(residual_norm)?;
                beta_windowed_rms(*eta, *gamma, window)
            }
            ForgettingPolicy::Harmonic {} => Ok(beta_harmonic(k)),
            ForgettingPolicy::Geometric { gamma } => Ok(*gamma),
            ForgettingPolicy::Schedule { values } => values.get(k).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "schedule of length {} exhausted at step {k}",
                    values.len()
                ))
            }),
        }
    }
}

/// The last `τ` residual norms.
#[derive(Clone, Debug)]
pub struct ResidualWindow {
    capacity: usize,
    values: VecDeque<f64>,
}

impl ResidualWindow {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::invalid("window capacity must be at least 1"));
        }
        Ok(Self {
            capacity: tau,
            values: VecDeque::with_capacity(tau),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, residual_norm: f64) -> Result<()> {
        if !(residual_norm >= 0.0 && residual_norm.is_finite()) {
            return Err(Error::invalid(format!(
                "residual norm must be finite and nonnegative, got {residual_norm}"
            )));
        }
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(residual_norm);
        Ok(())
    }

    /// Root mean square over the residuals currently held.
    ///
    /// Before the window fills this averages over what is available.
    pub fn rms(&self) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::invalid("residual window is empty"));
        }
        let sum_sq: f64 = self.values.iter().map(|r| r * r).sum();
        Ok((sum_sq / self.values.len() as f64).sqrt())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "lambda must lie in (0, 1], got {lambda}"
        )))
    }
}

pub fn beta_constant(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(1.0 / lambda)
}

/// Unit-slope saturation at level `gamma` on nonnegative arguments.
pub fn sat(gamma: f64, x: f64) -> Result<f64> {
    positive_finite("saturation level", gamma)?;
    if !(x >= 0.0) {
        return Err(Error::invalid(format!(
            "saturation argument must be nonnegative, got {x}"
        )));
    }
    Ok(x.min(gamma))
}

pub fn beta_residual_sat(eta: f64, gamma: f64, residual_norm: f64) -> Result<f64> {
    positive_finite("eta", eta)?;
    Ok(1.0 + eta * sat(gamma, residual_norm)?)
}

/// `E_τ = 1` takes the quiescent branch.
pub fn beta_windowed_rms(eta: f64, gamma: f64, window: &ResidualWindow) -> Result<f64> {
    positive_finite("eta", eta)?;
    let e = window.rms()?;
    if e > 1.0 {
        Ok(1.0 + eta * sat(gamma, e)?)
    } else {
        Ok(1.0)
    }
}

pub fn beta_harmonic(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        1.0 + 1.0 / k as f64
    }
}

/// `ρ_k = ρ_{k-1} β_k`, with `ρ_{-1} = 1`.
pub fn rho_accumulate(rho_prev: f64, beta: f64) -> Result<f64> {
    if !(rho_prev > 0.0) {
        return Err(Error::invalid(format!(
            "rho must be positive, got {rho_prev}"
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(rho_prev * beta)
}
