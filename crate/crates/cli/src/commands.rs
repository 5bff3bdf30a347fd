use std::path::Path;

use anyhow::{anyhow, Context};

use vrf_rls::analysis::{
    consistency_ratios, consistency_sequences, max_complete_windows, persistency_profile,
    upper_ratio_trends_to_zero, RhoSequence,
};
use vrf_rls::io::{
    parse_scenario, read_analysis_input, write_consistency_table, write_montecarlo_table,
    write_profile, write_trace, IoError,
};
use vrf_rls::sim::{monte_carlo_variance, run_scenario, steps_to_reconverge, Scenario};
use vrf_rls::Error;

use crate::output::{sidecar, Staged};

pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_SHORT_RECORD: i32 = 4;
pub const EXIT_PARAMETER_CHANGE: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    fn io(error: anyhow::Error) -> Self {
        Self::new(EXIT_IO, error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            _ if e.is_numerical() => EXIT_NUMERICAL,
            Error::ParameterChange { .. } => EXIT_PARAMETER_CHANGE,
            Error::InsufficientData { .. } => EXIT_SHORT_RECORD,
            _ => EXIT_INVALID,
        };
        Self::new(code, e)
    }
}

pub type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)
}

/// Every problem found while reading user input is an input error, including
/// an indefinite prior covariance.
fn input_failure(path: &Path, e: IoError) -> Failure {
    let code = match &e {
        IoError::Io(_) => EXIT_IO,
        _ if e.is_parse() => EXIT_INVALID,
        IoError::Invalid(Error::InsufficientData { .. }) => EXIT_SHORT_RECORD,
        _ => EXIT_INVALID,
    };
    Failure::new(code, anyhow!(e).context(format!("in {}", path.display())))
}

fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<Scenario, Failure> {
    let text = read_text(path)?;
    let mut scenario = parse_scenario(&text).map_err(|e| input_failure(path, e))?;
    if let Some(seed) = seed_override {
        scenario.input_seed = seed;
        scenario.noise.seed = seed;
    }
    Ok(scenario)
}

fn written(path: &Path) -> impl Fn(IoError) -> anyhow::Error + '_ {
    move |e| anyhow!(e).context(format!("writing {}", path.display()))
}

pub fn run(scenario_path: &Path, out: &Path, seed_override: Option<u64>) -> CmdResult {
    let scenario = load_scenario(scenario_path, seed_override)?;
    let trace = run_scenario(&scenario)?;

    let mut staged = Staged::default();
    staged
        .write(out, |w| write_trace(&trace, w).map_err(written(out)))
        .map_err(Failure::io)?;
    staged.commit().map_err(Failure::io)?;

    let mut summary = format!(
        "{} steps, final error_norm {:.6e}",
        trace.len(),
        trace.final_error().unwrap_or(f64::NAN)
    );
    for change in scenario.plant.change_steps() {
        match steps_to_reconverge(&trace, change) {
            Some(s) => summary.push_str(&format!(
                ", reconverged {s} steps after change at k={change}"
            )),
            None => summary.push_str(&format!(", not reconverged after change at k={change}")),
        }
    }
    println!("{summary}");
    Ok(())
}

pub fn analyze(input: &Path, out: &Path, n_max: usize, na: Option<usize>) -> CmdResult {
    let text = read_text(input)?;
    let record = read_analysis_input(&text, na).map_err(|e| input_failure(input, e))?;
    let len = record.phis.len();
    if len < n_max + 2 {
        return Err(Failure::new(
            EXIT_SHORT_RECORD,
            anyhow!(
                "record has {len} steps; at least N_max + 2 = {} are needed",
                n_max + 2
            ),
        ));
    }
    let profile = persistency_profile(&record.phis, n_max)?;
    let window = profile.map_or(0, |p| p.window);
    let rhos = RhoSequence::from_betas(&record.betas)?;
    let j_max = max_complete_windows(rhos.len(), window).expect("record holds at least one window");
    let seq = consistency_sequences(&rhos, window, j_max)?;

    let profile_path = sidecar(out, "profile");
    let mut staged = Staged::default();
    staged
        .write(out, |w| {
            write_consistency_table(&seq, w).map_err(written(out))
        })
        .map_err(Failure::io)?;
    staged
        .write(&profile_path, |w| {
            write_profile(profile.as_ref(), n_max, w).map_err(written(&profile_path))
        })
        .map_err(Failure::io)?;
    staged.commit().map_err(Failure::io)?;

    match profile {
        Some(p) => println!(
            "persistent with N = {}, alpha = {:.6e}, beta = {:.6e}",
            p.window, p.alpha, p.beta_ub
        ),
        None => println!("not persistent up to N_max = {n_max}; sequences use N = 0"),
    }
    let verdict = match upper_ratio_trends_to_zero(&consistency_ratios(&seq)) {
        Some(true) => "holds",
        Some(false) => "does not hold",
        None => "undetermined (fewer than 8 windows)",
    };
    println!("upper ratio decreasing toward 0 over the final quartile of j: {verdict}");
    Ok(())
}

pub fn montecarlo(
    scenario_path: &Path,
    runs: usize,
    checkpoints: &[usize],
    out: &Path,
    n_max: usize,
    seed_override: Option<u64>,
) -> CmdResult {
    let scenario = load_scenario(scenario_path, seed_override)?;
    if scenario.plant.segments.len() > 1 {
        return Err(Error::ParameterChange {
            segments: scenario.plant.segments.len(),
        }
        .into());
    }
    if scenario.noise.variance <= 0.0 {
        return Err(Failure::new(
            EXIT_INVALID,
            anyhow!("montecarlo needs a positive noise variance"),
        ));
    }
    let report = monte_carlo_variance(&scenario, runs, checkpoints)?;
    let bounds = report.variance_bounds(n_max)?;
    let pairs: Vec<Option<(f64, f64)>> = match &bounds {
        Some(b) => b
            .bounds
            .iter()
            .map(|v| v.map(|v| (v.lower, v.upper)))
            .collect(),
        None => vec![None; report.checkpoints.len()],
    };

    let mut staged = Staged::default();
    staged
        .write(out, |w| {
            write_montecarlo_table(&report.checkpoints, &pairs, w).map_err(written(out))
        })
        .map_err(Failure::io)?;
    staged.commit().map_err(Failure::io)?;

    match &bounds {
        Some(b) => println!(
            "{runs} runs; reference record persistent with N = {}, alpha = {:.6e}, beta = {:.6e}",
            b.profile.window, b.profile.alpha, b.profile.beta_ub
        ),
        None => println!(
            "{runs} runs; reference record not persistent up to N_max = {n_max}, no bounds"
        ),
    }
    for c in &report.checkpoints {
        println!(
            "k={}: lambda_min {:.4e} (se {:.1e}), lambda_max {:.4e} (se {:.1e})",
            c.k, c.lambda_min, c.se_min, c.lambda_max, c.se_max
        );
    }
    Ok(())
}
