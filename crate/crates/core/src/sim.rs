//! ARX simulation, scenario runs and Monte Carlo covariance studies.
//!
//! Random streams are ChaCha8 generators keyed by a `u64` seed plus a stream
//! id (inputs on stream 0, measurement noise on stream 1, prior draws on
//! stream 2), with normals drawn by `rand_distr::StandardNormal`. Monte Carlo
//! replicate `r` uses seeds derived from the scenario seeds by [`split_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{
    consistency_sequences, max_complete_windows, persistency_profile, variance_bounds,
    PersistencyProfile, RhoSequence, VarianceBounds,
};
use crate::error::{Error, Result};
use crate::estimator::{self, norm, residual, EstimatorConfig, StepInput};
use crate::forgetting::{rho_accumulate, ForgettingPolicy};
use crate::linalg::{cholesky_lower, sym_eig_extrema, Mat, SymMat};

pub const INPUT_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;
pub const PRIOR_STREAM: u64 = 2;

/// Fewest replicates accepted by [`monte_carlo_variance`].
pub const MIN_MC_RUNS: usize = 100;

/// Step at which the example plant switches parameters.
pub const EXAMPLE_CHANGE_STEP: usize = 100;
/// Example plant before the change, `[a1, a2, b1, b2]` in the ARX layout.
pub const EXAMPLE_THETA_BEFORE: [f64; 4] = [1.64, -0.8187, 0.4606, 0.4307];
/// Example plant from the change onward.
pub const EXAMPLE_THETA_AFTER: [f64; 4] = [0.3116, -0.998, 0.4218, 0.4215];

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    (0..t).map(|_| StandardNormal.sample(rng)).collect()
}

/// SplitMix64 finalizer applied to `base + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn split_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `t` standard normal samples from the input stream of `seed`.
pub fn gaussian_input(seed: u64, t: usize) -> Vec<f64> {
    normals(&mut stream_rng(seed, INPUT_STREAM), t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub theta: Vec<f64>,
}

/// Piecewise-constant ARX plant
/// `y_k = a_1 y_{k−1} + … + a_na y_{k−na} + b_1 u_{k−1} + … + b_nb u_{k−nb} + ν_k`
/// with `θ = [a_1..a_na, b_1..b_nb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantSpec {
    pub segments: Vec<Segment>,
    pub na: usize,
    pub nb: usize,
}

impl PlantSpec {
    /// The mass-spring-damper example: parameters change abruptly at step 100.
    pub fn abrupt_change_example() -> Self {
        Self {
            segments: vec![
                Segment {
                    start: 0,
                    theta: EXAMPLE_THETA_BEFORE.to_vec(),
                },
                Segment {
                    start: EXAMPLE_CHANGE_STEP,
                    theta: EXAMPLE_THETA_AFTER.to_vec(),
                },
            ],
            na: 2,
            nb: 2,
        }
    }

    /// The example plant before its change, held constant.
    pub fn constant_example() -> Self {
        Self {
            segments: vec![Segment {
                start: 0,
                theta: EXAMPLE_THETA_BEFORE.to_vec(),
            }],
            na: 2,
            nb: 2,
        }
    }

    pub fn params(&self) -> usize {
        self.na + self.nb
    }

    pub fn validate(&self) -> Result<()> {
        if self.params() == 0 {
            return Err(Error::invalid("plant needs at least one parameter"));
        }
        match self.segments.first() {
            None => return Err(Error::invalid("plant needs at least one segment")),
            Some(s) if s.start != 0 => {
                return Err(Error::invalid("first segment must start at step 0"))
            }
            _ => {}
        }
        if let Some(w) = self.segments.windows(2).find(|w| w[1].start <= w[0].start) {
            return Err(Error::invalid(format!(
                "segment starts must increase strictly ({} then {})",
                w[0].start, w[1].start
            )));
        }
        for s in &self.segments {
            if s.theta.len() != self.params() {
                return Err(Error::DimensionMismatch {
                    context: "segment parameter vector",
                    expected: self.params(),
                    got: s.theta.len(),
                });
            }
            if s.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("segment parameters must be finite"));
            }
        }
        Ok(())
    }

    /// Parameters active at step `k`.
    pub fn theta_at(&self, k: usize) -> &[f64] {
        let idx = self.segments.partition_point(|s| s.start <= k);
        &self.segments[idx - 1].theta
    }

    /// Starts of every segment after the first.
    pub fn change_steps(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            variance: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be finite and nonnegative, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// `t` samples of `N(0, variance)` from the noise stream.
    pub fn samples(&self, t: usize) -> Vec<f64> {
        let sd = self.variance.sqrt();
        normals(&mut stream_rng(self.seed, NOISE_STREAM), t)
            .into_iter()
            .map(|z| sd * z)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArxSample {
    pub phi: Mat,
    pub y: f64,
    pub u: f64,
    pub noise: f64,
}

/// Regressor `[y_{k−1}..y_{k−na}, u_{k−1}..u_{k−nb}]`, zero before step 0.
pub fn arx_regressor(ys: &[f64], us: &[f64], k: usize, na: usize, nb: usize) -> Mat {
    let lag = |xs: &[f64], d: usize| if k >= d { xs[k - d] } else { 0.0 };
    let row: Vec<f64> = (1..=na)
        .map(|d| lag(ys, d))
        .chain((1..=nb).map(|d| lag(us, d)))
        .collect();
    Mat::row_vector(&row).expect("plant has at least one parameter")
}

pub fn simulate_arx(
    plant: &PlantSpec,
    inputs: &[f64],
    noise: &NoiseModel,
    t: usize,
) -> Result<Vec<ArxSample>> {
    plant.validate()?;
    noise.validate()?;
    if inputs.len() < t {
        return Err(Error::InsufficientData {
            needed: t,
            got: inputs.len(),
        });
    }
    let nu = noise.samples(t);
    let mut ys = Vec::with_capacity(t);
    let mut out = Vec::with_capacity(t);
    for k in 0..t {
        let phi = arx_regressor(&ys, inputs, k, plant.na, plant.nb);
        let y = phi.matvec(plant.theta_at(k))[0] + nu[k];
        ys.push(y);
        out.push(ArxSample {
            phi,
            y,
            u: inputs[k],
            noise: nu[k],
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub plant: PlantSpec,
    pub noise: NoiseModel,
    pub input_seed: u64,
    pub horizon: usize,
    pub policy: ForgettingPolicy,
    pub estimator: EstimatorConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.noise.validate()?;
        self.policy.validate()?;
        self.estimator.validate()?;
        if self.estimator.params() != self.plant.params() {
            return Err(Error::DimensionMismatch {
                context: "estimator parameter count",
                expected: self.plant.params(),
                got: self.estimator.params(),
            });
        }
        if self.estimator.outputs != 1 {
            return Err(Error::DimensionMismatch {
                context: "estimator output count",
                expected: 1,
                got: self.estimator.outputs,
            });
        }
        if self.horizon < self.plant.params().max(1) {
            return Err(Error::invalid(format!(
                "horizon {} is shorter than the regressor length {}",
                self.horizon,
                self.plant.params()
            )));
        }
        Ok(())
    }
}

/// One row of a scenario run. `theta` is the estimate before consuming step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub theta: Vec<f64>,
    pub beta: f64,
    pub rho: f64,
    pub residual_norm: f64,
    pub error_norm: f64,
    pub y: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn params(&self) -> usize {
        self.records.first().map_or(0, |r| r.theta.len())
    }

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.error_norm)
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }

    /// First `k >= from` starting a run of `sustain` consecutive steps with
    /// `error_norm < threshold`.
    pub fn first_sustained_below(
        &self,
        from: usize,
        threshold: f64,
        sustain: usize,
    ) -> Option<usize> {
        let mut run = 0;
        for r in self.records.iter().filter(|r| r.k >= from) {
            if r.error_norm < threshold {
                run += 1;
                if run == sustain {
                    return Some(r.k + 1 - sustain);
                }
            } else {
                run = 0;
            }
        }
        None
    }
}

/// Error threshold and run length defining reconvergence after a change.
pub const RECONVERGE_THRESHOLD: f64 = 0.05;
pub const RECONVERGE_SUSTAIN: usize = 5;

/// Steps from `change` until the error stays below 0.05 for 5 steps.
pub fn steps_to_reconverge(trace: &Trace, change: usize) -> Option<usize> {
    trace
        .first_sustained_below(change, RECONVERGE_THRESHOLD, RECONVERGE_SUSTAIN)
        .map(|k| k - change)
}

/// Drives the estimator over `samples`, calling `visit` with each trace row.
fn drive(
    samples: &[ArxSample],
    plant: &PlantSpec,
    policy: &ForgettingPolicy,
    config: &EstimatorConfig,
    mut visit: impl FnMut(&TraceRecord, &estimator::EstimatorState),
) -> Result<estimator::EstimatorState> {
    let mut state = estimator::init(config)?;
    let mut betas = policy.start()?;
    let mut rho = 1.0;
    for (k, s) in samples.iter().enumerate() {
        let y = [s.y];
        let residual_norm = norm(&residual(&s.phi, &y, &state.theta));
        let beta = betas.next_beta(k, residual_norm)?;
        rho = rho_accumulate(rho, beta)?;
        let truth = plant.theta_at(k);
        let err: Vec<f64> = state.theta.iter().zip(truth).map(|(a, b)| a - b).collect();
        let record = TraceRecord {
            k,
            theta: state.theta.clone(),
            beta,
            rho,
            residual_norm,
            error_norm: norm(&err),
            y: s.y,
            u: s.u,
        };
        visit(&record, &state);
        state = estimator::step(&state, &StepInput::new(s.phi.clone(), y.to_vec(), beta))?;
    }
    Ok(state)
}

pub fn run_scenario(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let inputs = gaussian_input(scenario.input_seed, scenario.horizon);
    let samples = simulate_arx(&scenario.plant, &inputs, &scenario.noise, scenario.horizon)?;
    let mut records = Vec::with_capacity(scenario.horizon);
    drive(
        &samples,
        &scenario.plant,
        &scenario.policy,
        &scenario.estimator,
        |r, _| records.push(r.clone()),
    )?;
    Ok(Trace { records })
}

/// Eigen-extrema of the across-replicate sample covariance of `θ_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointStats {
    pub k: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Jackknife standard errors of the two extrema.
    pub se_min: f64,
    pub se_max: f64,
}

#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub checkpoints: Vec<CheckpointStats>,
    /// Regressors of replicate 0, for persistency profiling.
    pub reference_phis: Vec<Mat>,
    /// Forgetting rates of replicate 0.
    pub reference_betas: Vec<f64>,
    pub noise_variance: f64,
}

/// Bounds evaluated for each checkpoint, alongside the profile used.
#[derive(Clone, Debug)]
pub struct CheckpointBounds {
    pub profile: PersistencyProfile,
    /// `None` where the checkpoint holds no complete persistency window.
    pub bounds: Vec<Option<VarianceBounds>>,
}

impl MonteCarloReport {
    /// Covariance bracket at each checkpoint using the persistency profile and
    /// forgetting products of replicate 0. `None` if that record is not
    /// persistent for any window up to `n_max`.
    pub fn variance_bounds(&self, n_max: usize) -> Result<Option<CheckpointBounds>> {
        let Some(profile) = persistency_profile(&self.reference_phis, n_max)? else {
            return Ok(None);
        };
        let rhos = RhoSequence::from_betas(&self.reference_betas)?;
        let j_max =
            max_complete_windows(rhos.len(), profile.window).ok_or(Error::InsufficientData {
                needed: profile.window + 1,
                got: rhos.len(),
            })?;
        let seq = consistency_sequences(&rhos, profile.window, j_max)?;
        let v = self.noise_variance;
        let bounds = self
            .checkpoints
            .iter()
            .map(|c| {
                let j = crate::analysis::xi(c.k, profile.window);
                if j == 0 || j > j_max {
                    Ok(None)
                } else {
                    variance_bounds(&profile, v, v, &seq, c.k).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(CheckpointBounds { profile, bounds }))
    }
}

struct Replicate {
    thetas: Vec<Vec<f64>>,
    phis: Vec<Mat>,
    betas: Vec<f64>,
}

fn run_replicate(
    scenario: &Scenario,
    r: usize,
    checkpoints: &[usize],
    keep_record: bool,
) -> Result<Replicate> {
    // The reference replicate runs to the full horizon so that bounds can be
    // evaluated at the last checkpoint.
    let last_cp = *checkpoints.last().expect("checkpoints are nonempty");
    let horizon = if keep_record {
        scenario.horizon
    } else {
        last_cp
    };
    let r = r as u64;
    let input_seed = split_seed(scenario.input_seed, r);
    let noise = NoiseModel {
        variance: scenario.noise.variance,
        seed: split_seed(scenario.noise.seed, r),
    };
    let truth = scenario.plant.theta_at(0);

    // θ_0 ~ N(θ, P_0)
    let chol = cholesky_lower(scenario.estimator.p0.as_sym())?;
    let z = normals(&mut stream_rng(noise.seed, PRIOR_STREAM), truth.len());
    let theta0: Vec<f64> = chol
        .matvec(&z)
        .iter()
        .zip(truth)
        .map(|(d, t)| t + d)
        .collect();
    let config = EstimatorConfig {
        theta0,
        ..scenario.estimator.clone()
    };

    let inputs = gaussian_input(input_seed, horizon);
    let samples = simulate_arx(&scenario.plant, &inputs, &noise, horizon)?;

    let mut thetas = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    let mut betas = Vec::new();
    let last = drive(
        &samples,
        &scenario.plant,
        &scenario.policy,
        &config,
        |rec, state| {
            while next < checkpoints.len() && checkpoints[next] == rec.k {
                thetas.push(state.theta.clone());
                next += 1;
            }
            if keep_record {
                betas.push(rec.beta);
            }
        },
    )?;
    while next < checkpoints.len() {
        thetas.push(last.theta.clone());
        next += 1;
    }
    Ok(Replicate {
        thetas,
        phis: if keep_record {
            samples.into_iter().map(|s| s.phi).collect()
        } else {
            Vec::new()
        },
        betas,
    })
}

/// Sample covariance eigen-extrema with jackknife standard errors.
fn covariance_stats(k: usize, xs: &[Vec<f64>]) -> Result<CheckpointStats> {
    let r = xs.len();
    let n = xs[0].len();
    let rf = r as f64;
    let center: Vec<f64> = (0..n)
        .map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / rf)
        .collect();
    let centered: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&center).map(|(a, c)| a - c).collect())
        .collect();
    let mut s1 = vec![0.0; n];
    let mut s2 = Mat::zeros(n, n);
    for x in &centered {
        for i in 0..n {
            s1[i] += x[i];
            for j in 0..n {
                s2[(i, j)] += x[i] * x[j];
            }
        }
    }
    let cov_from = |s1: &[f64], s2: &Mat, count: f64| -> SymMat {
        let mut c = s2.clone();
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] = (c[(i, j)] - s1[i] * s1[j] / count) / (count - 1.0);
            }
        }
        SymMat::symmetrize(c)
    };
    let (lambda_min, lambda_max) = sym_eig_extrema(&cov_from(&s1, &s2, rf))?;

    let mut loo_min = Vec::with_capacity(r);
    let mut loo_max = Vec::with_capacity(r);
    for x in &centered {
        let s1_i: Vec<f64> = s1.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut s2_i = s2.clone();
        for i in 0..n {
            for j in 0..n {
                s2_i[(i, j)] -= x[i] * x[j];
            }
        }
        let (lo, hi) = sym_eig_extrema(&cov_from(&s1_i, &s2_i, rf - 1.0))?;
        loo_min.push(lo);
        loo_max.push(hi);
    }
    let jackknife_se = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / rf;
        ((rf - 1.0) / rf * v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()).sqrt()
    };
    Ok(CheckpointStats {
        k,
        lambda_min,
        lambda_max,
        se_min: jackknife_se(&loo_min),
        se_max: jackknife_se(&loo_max),
    })
}

/// Runs `runs` replicates of a constant-parameter scenario and reports the
/// sample covariance of `θ_k` at each checkpoint.
///
/// Replicates differ in input and noise seeds and in `θ_0 ~ N(θ, P_0)`; the
/// scenario's own `theta0` is not used. Replicate `r` takes its seeds from
/// [`split_seed`] applied to the scenario seeds and `r`. Replicates run in
/// parallel and results are independent of scheduling.
pub fn monte_carlo_variance(
    scenario: &Scenario,
    runs: usize,
    checkpoints: &[usize],
) -> Result<MonteCarloReport> {
    scenario.validate()?;
    if runs < MIN_MC_RUNS {
        return Err(Error::InsufficientRuns {
            min: MIN_MC_RUNS,
            got: runs,
        });
    }
    if scenario.plant.segments.len() != 1 {
        return Err(Error::ParameterChange {
            segments: scenario.plant.segments.len(),
        });
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if cps.is_empty() {
        return Err(Error::invalid("at least one checkpoint is required"));
    }
    if let Some(&k) = cps.iter().find(|&&k| k > scenario.horizon) {
        return Err(Error::invalid(format!(
            "checkpoint {k} lies beyond the horizon {}",
            scenario.horizon
        )));
    }

    let replicates = (0..runs)
        .into_par_iter()
        .map(|r| run_replicate(scenario, r, &cps, r == 0))
        .collect::<Result<Vec<_>>>()?;

    let checkpoints = cps
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let xs: Vec<Vec<f64>> = replicates.iter().map(|rep| rep.thetas[c].clone()).collect();
            covariance_stats(k, &xs)
        })
        .collect::<Result<Vec<_>>>()?;

    let first = replicates.into_iter().next().expect("runs >= MIN_MC_RUNS");
    Ok(MonteCarloReport {
        runs,
        checkpoints,
        reference_phis: first.phis,
        reference_betas: first.betas,
        noise_variance: scenario.noise.variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SpdMat;

    fn scenario(
        plant: PlantSpec,
        variance: f64,
        policy: ForgettingPolicy,
        horizon: usize,
    ) -> Scenario {
        let n = plant.params();
        Scenario {
            plant,
            noise: NoiseModel { variance, seed: 7 },
            input_seed: 3,
            horizon,
            policy,
            estimator: EstimatorConfig::new(
                vec![0.0; n],
                SpdMat::from_diag(&vec![100.0; n]).unwrap(),
                1,
            )
            .unwrap(),
        }
    }

    #[test]
    fn gaussian_input_is_deterministic_and_seeded() {
        assert_eq!(gaussian_input(5, 100), gaussian_input(5, 100));
        let a = gaussian_input(5, 10);
        let b = gaussian_input(6, 10);
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    }

    #[test]
    fn gaussian_input_moments() {
        let xs = gaussian_input(2024, 100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn input_and_noise_streams_differ_for_equal_seeds() {
        let u = gaussian_input(9, 20);
        let nu = NoiseModel {
            variance: 1.0,
            seed: 9,
        }
        .samples(20);
        assert!(u.iter().zip(&nu).all(|(a, b)| a != b));
    }

    #[test]
    fn zero_input_zero_output() {
        let out = simulate_arx(
            &PlantSpec::abrupt_change_example(),
            &[0.0; 50],
            &NoiseModel::noiseless(),
            50,
        )
        .unwrap();
        assert!(out.iter().all(|s| s.y == 0.0));
    }

    #[test]
    fn impulse_response_of_example_plant() {
        let mut u = vec![0.0; 10];
        u[0] = 1.0;
        let out = simulate_arx(
            &PlantSpec::constant_example(),
            &u,
            &NoiseModel::noiseless(),
            10,
        )
        .unwrap();
        // Long division of (0.4606 q + 0.4307) / (q² − 1.64 q + 0.8187).
        let mut h = [0.0; 10];
        let (num, den) = ([0.4606, 0.4307], [-1.64, 0.8187]);
        for k in 1..10 {
            let mut v = if k <= 2 { num[k - 1] } else { 0.0 };
            for d in 1..=2 {
                if k > d {
                    v -= den[d - 1] * h[k - d];
                }
            }
            h[k] = v;
        }
        assert_eq!(out[0].y, 0.0);
        assert!((out[1].y - 0.4606).abs() < 1e-15);
        assert!((out[2].y - (1.64 * 0.4606 + 0.4307)).abs() < 1e-15);
        for k in 0..10 {
            assert!((out[k].y - h[k]).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn parameters_switch_exactly_at_the_change() {
        let plant = PlantSpec::abrupt_change_example();
        assert_eq!(plant.theta_at(99), &EXAMPLE_THETA_BEFORE);
        assert_eq!(plant.theta_at(100), &EXAMPLE_THETA_AFTER);
        assert_eq!(plant.change_steps(), vec![100]);
    }

    #[test]
    fn plant_validation() {
        let mut p = PlantSpec::abrupt_change_example();
        p.segments.swap(0, 1);
        assert!(p.validate().is_err());
        let mut p = PlantSpec::abrupt_change_example();
        p.segments[1].start = 0;
        assert!(p.validate().is_err());
        let mut p = PlantSpec::constant_example();
        p.segments[0].theta.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn recorded_noise_reconstructs_outputs() {
        let plant = PlantSpec::abrupt_change_example();
        let u = gaussian_input(1, 300);
        let out = simulate_arx(
            &plant,
            &u,
            &NoiseModel {
                variance: 0.05,
                seed: 4,
            },
            300,
        )
        .unwrap();
        for (k, s) in out.iter().enumerate() {
            assert_eq!(s.phi.matvec(plant.theta_at(k))[0] + s.noise, s.y);
        }
    }

    #[test]
    fn example_regressors_are_persistent() {
        let u = gaussian_input(77, 500);
        let out = simulate_arx(
            &PlantSpec::constant_example(),
            &u,
            &NoiseModel::noiseless(),
            500,
        )
        .unwrap();
        let phis: Vec<Mat> = out.into_iter().map(|s| s.phi).collect();
        let p = persistency_profile(&phis, 8).unwrap();
        assert!(p.is_some());
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let s = scenario(
            PlantSpec::abrupt_change_example(),
            0.05,
            ForgettingPolicy::WindowedRms {
                eta: 1.0,
                gamma: 5.0,
                tau: 10,
            },
            200,
        );
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.records[0].theta, vec![0.0; 4]);
    }

    #[test]
    fn noiseless_constant_plant_converges() {
        let s = scenario(
            PlantSpec::constant_example(),
            0.0,
            ForgettingPolicy::ResidualSaturation {
                eta: 1.0,
                gamma: 1.0,
            },
            2000,
        );
        let t = run_scenario(&s).unwrap();
        // The prior's pull decays like 1/k once β settles near 1.
        assert!(t.records[100].error_norm < 1e-4);
        assert!(t.final_error().unwrap() < 1e-5);
        for r in &t.records {
            assert!(r.beta >= 1.0 && r.beta <= 2.0);
        }
    }

    #[test]
    fn trace_betas_follow_pre_update_residual() {
        let s = scenario(
            PlantSpec::abrupt_change_example(),
            0.0,
            ForgettingPolicy::ResidualSaturation {
                eta: 1.0,
                gamma: 1.0,
            },
            150,
        );
        let t = run_scenario(&s).unwrap();
        let mut rho = 1.0;
        for r in &t.records {
            assert_eq!(r.beta, 1.0 + r.residual_norm.min(1.0));
            rho *= r.beta;
            assert_eq!(r.rho, rho);
        }
    }

    #[test]
    fn sustained_threshold_search() {
        let records = [0.5, 0.01, 0.2, 0.01, 0.01, 0.01]
            .iter()
            .enumerate()
            .map(|(k, &e)| TraceRecord {
                k,
                theta: vec![0.0],
                beta: 1.0,
                rho: 1.0,
                residual_norm: 0.0,
                error_norm: e,
                y: 0.0,
                u: 0.0,
            })
            .collect();
        let t = Trace { records };
        assert_eq!(t.first_sustained_below(0, 0.05, 3), Some(3));
        assert_eq!(t.first_sustained_below(0, 0.05, 4), None);
        assert_eq!(t.first_sustained_below(0, 0.05, 1), Some(1));
    }

    #[test]
    fn monte_carlo_preconditions() {
        let s = scenario(
            PlantSpec::constant_example(),
            0.05,
            ForgettingPolicy::Constant { lambda: 1.0 },
            200,
        );
        assert!(matches!(
            monte_carlo_variance(&s, 50, &[100]),
            Err(Error::InsufficientRuns { min: 100, got: 50 })
        ));
        let changing = scenario(
            PlantSpec::abrupt_change_example(),
            0.05,
            ForgettingPolicy::Constant { lambda: 1.0 },
            200,
        );
        assert!(matches!(
            monte_carlo_variance(&changing, 100, &[100]),
            Err(Error::ParameterChange { segments: 2 })
        ));
        assert!(monte_carlo_variance(&s, 100, &[300]).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let s = scenario(
            PlantSpec::constant_example(),
            0.05,
            ForgettingPolicy::Constant { lambda: 1.0 },
            100,
        );
        let a = monte_carlo_variance(&s, 100, &[50, 100]).unwrap();
        let b = monte_carlo_variance(&s, 100, &[100, 50]).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.reference_betas.len(), 100);
    }

    #[test]
    fn noiseless_monte_carlo_collapses() {
        let mut s = scenario(
            PlantSpec::constant_example(),
            0.0,
            ForgettingPolicy::Constant { lambda: 1.0 },
            400,
        );
        s.estimator.p0 = SpdMat::identity(4);
        let report = monte_carlo_variance(&s, 100, &[0, 100, 400]).unwrap();
        let first = report.checkpoints[0].lambda_max;
        assert!(first > 0.1, "prior spread {first}");
        let c = &report.checkpoints;
        assert!(c[1].lambda_max < 1e-3 * first);
        assert!(c[2].lambda_max < c[1].lambda_max / 4.0);
    }

    #[test]
    fn covariance_stats_of_known_sample() {
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0])
            .collect();
        let s = covariance_stats(5, &xs).unwrap();
        assert!((s.lambda_max - 100.0 / 99.0).abs() < 1e-12);
        assert!(s.lambda_min.abs() < 1e-12);
        assert!(s.se_max >= 0.0 && s.se_max < 0.05);
    }

    #[test]
    fn seeds_split_distinctly() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| split_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
