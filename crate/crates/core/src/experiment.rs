//! JSON experiment configurations and the pipelines behind each subcommand.
//!
//! A run produces one or more named CSV artifacts and an [`Outcome`]; the
//! caller decides where the artifacts go.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{bound_csv_row, BoundFamily, BoundResult, BOUND_CSV_HEADER};
use crate::montecarlo::{
    domination_study, estimate_csv_row, estimate_grid, exact_deviation_profile, Estimate,
    MonteCarloError, ESTIMATE_CSV_HEADER, STUDY_CSV_HEADER,
};
use crate::operator::{mixing_profile, solve_poisson, solve_poisson_direct, UlamOperator};
use crate::systems::{
    build_doubling_system, build_finite_chain, build_iid_system, build_map_system,
    build_tent_system, sample_observable, Branch, Density, MarkovSystem, Observable,
    PiecewiseAffineMap, TruncationPart,
};
use crate::truncation::{fit_exponential_tail, l2_tail_control};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Tent,
    Doubling,
    Finite {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stationary: Option<Vec<f64>>,
    },
    Map {
        branches: Vec<Branch>,
        /// Piecewise-constant invariant density on uniform bins; Lebesgue if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<Vec<f64>>,
    },
    Iid {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    Tabular { values: Vec<f64> },
    /// `|log|x − z||`
    LogDistance { z: f64 },
    /// `log x`
    Log,
    Affine { slope: f64, intercept: f64 },
    Indicator { low: f64, high: f64 },
    Constant { value: f64 },
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// `scale·base + shift`, optionally centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub base: BaseSpec,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<u64>,
    pub eps: Vec<f64>,
}

/// A bound selection. `rate_multiplier` scales the decay constant and
/// exists for falsification runs; leave it at 1 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSpec {
    AzumaHoeffding {
        c: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        rate_multiplier: f64,
    },
    /// Constants left out are derived from the chain's exact Poisson solution.
    BoundedLdt {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sup_phi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sup_psi: Option<f64>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        rate_multiplier: f64,
    },
    UnboundedLdt {
        alpha: f64,
        c_burk: f64,
        norm_phi2_l2: f64,
        #[serde(default, skip_serializing_if = "is_false")]
        two_sided: bool,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        rate_multiplier: f64,
    },
    TentCorollary {
        #[serde(default = "one", skip_serializing_if = "is_one")]
        rate_multiplier: f64,
    },
    ExpandingLdt {
        c_eps: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        rate_multiplier: f64,
    },
}

impl BoundSpec {
    fn rate_multiplier(&self) -> f64 {
        match *self {
            BoundSpec::AzumaHoeffding { rate_multiplier, .. }
            | BoundSpec::BoundedLdt { rate_multiplier, .. }
            | BoundSpec::UnboundedLdt { rate_multiplier, .. }
            | BoundSpec::TentCorollary { rate_multiplier }
            | BoundSpec::ExpandingLdt { rate_multiplier, .. } => rate_multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlamSpec {
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_mixing_steps")]
    pub mixing_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_quantile")]
    pub quantile_floor: f64,
    /// Truncation level for the `L²` tail trace; no trace when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_m: Option<f64>,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_tail_steps")]
    pub n_max: usize,
}

fn default_cells() -> usize {
    256
}
fn default_tol() -> f64 {
    1e-12
}
fn default_mixing_steps() -> usize {
    50
}
fn default_samples() -> usize {
    1_000_000
}
fn default_quantile() -> f64 {
    0.5
}
fn default_tail_steps() -> usize {
    200
}
fn default_ci() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<BoundSpec>,
    /// Output path prefix; artifacts go to `<prefix>_<name>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ulam: Option<UlamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailsSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Bound,
    Verify,
    Ulam,
    Psi,
    Tails,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Bound => "bound",
            Command::Verify => "verify",
            Command::Ulam => "ulam",
            Command::Psi => "psi",
            Command::Tails => "tails",
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Schema or parameter problem: the config cannot be run as written.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running a valid config.
    #[error("runtime error: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Config(msg.into()))
}

fn runtime<E: std::fmt::Display>(e: E) -> ExperimentError {
    ExperimentError::Runtime(e.to_string())
}

/// Parses a config; the message of a schema violation names the field and
/// its line and column.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the Markov system; invalid parameters are config errors.
    pub fn build_system(&self) -> Result<MarkovSystem> {
        let sys = match &self.system {
            SystemSpec::Tent => build_tent_system(),
            SystemSpec::Doubling => build_doubling_system(),
            SystemSpec::Finite { matrix, stationary } => {
                build_finite_chain(matrix, stationary.as_deref()).map_err(|e| ExperimentError::Config(format!("system: {e}")))?
            }
            SystemSpec::Map { branches, density } => {
                let map = PiecewiseAffineMap::new(branches.clone())
                    .map_err(|e| ExperimentError::Config(format!("system.branches: {e}")))?;
                build_map_system(map, density_of(density)?)
            }
            SystemSpec::Iid { density } => build_iid_system(density_of(density)?),
        };
        Ok(sys)
    }

    /// Builds the observable and checks it against `system`.
    pub fn build_observable(&self, system: &MarkovSystem) -> Result<Observable> {
        let Some(spec) = &self.observable else {
            return config_err("missing field `observable`");
        };
        let base = match &spec.base {
            BaseSpec::Tabular { values } => Observable::tabular(values.clone()),
            BaseSpec::LogDistance { z } => Observable::log_distance(*z),
            BaseSpec::Log => Observable::log(),
            BaseSpec::Affine { slope, intercept } => Observable::affine(*slope, *intercept),
            BaseSpec::Indicator { low, high } => Observable::indicator(*low, *high),
            BaseSpec::Constant { value } => Observable::constant(*value),
        };
        if !(spec.scale.is_finite() && spec.shift.is_finite()) {
            return config_err("observable: scale and shift must be finite");
        }
        let (s, c) = (base.scale(), base.shift());
        let obs = base.scaled(spec.scale * s, spec.scale * c + spec.shift);
        obs.check_compatible(system)
            .map_err(|e| ExperimentError::Config(format!("observable: {e}")))?;
        if spec.center {
            obs.centered(system).map_err(runtime)
        } else {
            Ok(obs)
        }
    }

    fn grid(&self) -> Result<(&[u64], &[f64])> {
        let Some(g) = &self.grid else {
            return config_err("missing field `grid`");
        };
        if g.n.is_empty() || g.eps.is_empty() {
            return config_err("grid: `n` and `eps` must be non-empty");
        }
        if g.n.contains(&0) {
            return config_err("grid.n: every n must be positive");
        }
        if let Some(e) = g.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return config_err(format!("grid.eps: eps must be positive, got {e}"));
        }
        Ok((&g.n, &g.eps))
    }

    fn trials(&self) -> Result<usize> {
        match self.trials {
            Some(t) if t >= crate::montecarlo::MIN_TRIALS => Ok(t),
            Some(t) => config_err(format!("trials: need at least {}, got {t}", crate::montecarlo::MIN_TRIALS)),
            None => config_err("missing field `trials`"),
        }
    }

    fn check_common(&self) -> Result<()> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return config_err(format!("ci_level must lie in (0,1), got {}", self.ci_level));
        }
        for (k, b) in self.bounds.iter().enumerate() {
            let r = b.rate_multiplier();
            if !(r > 0.0 && r.is_finite()) {
                return config_err(format!("bounds[{k}].rate_multiplier must be positive"));
            }
        }
        Ok(())
    }
}

fn density_of(values: &Option<Vec<f64>>) -> Result<Density> {
    match values {
        None => Ok(Density::uniform()),
        Some(v) => Density::piecewise_constant(v.clone())
            .map_err(|e| ExperimentError::Config(format!("system.density: {e}"))),
    }
}

/// Result status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// A verification found at least one FAIL verdict.
    DominationFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// `(name, csv)`; the first entry is the command's main artifact.
    pub artifacts: Vec<(String, String)>,
    pub outcome: Outcome,
}

impl RunOutput {
    fn single(name: &str, csv: String) -> Self {
        RunOutput {
            artifacts: vec![(name.to_string(), csv)],
            outcome: Outcome::Ok,
        }
    }
}

/// Validates `config` for `command` and runs it.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunOutput> {
    config.check_common()?;
    match command {
        Command::Simulate => run_simulate(config),
        Command::Bound => run_bound(config),
        Command::Verify => run_verify(config),
        Command::Ulam => run_ulam(config),
        Command::Psi => run_psi(config),
        Command::Tails => run_tails(config),
    }
}

fn to_usize(ns: &[u64]) -> Vec<usize> {
    ns.iter().map(|n| *n as usize).collect()
}

fn run_simulate(config: &ExperimentConfig) -> Result<RunOutput> {
    let (ns, eps) = config.grid()?;
    let trials = config.trials()?;
    let system = config.build_system()?;
    let obs = config.build_observable(&system)?;
    let est = estimate_grid(&system, &obs, &to_usize(ns), eps, trials, config.master_seed, config.ci_level)
        .map_err(runtime)?;
    let mut csv = format!("{ESTIMATE_CSV_HEADER}\n");
    for e in &est {
        csv.push_str(&estimate_csv_row(e));
        csv.push('\n');
    }
    Ok(RunOutput::single("simulate", csv))
}

/// `(‖φ‖∞, ‖ψ‖∞)` for the centred observable of a finite chain.
fn derived_bounded_constants(system: &MarkovSystem, obs: &Observable) -> Result<(f64, f64)> {
    let Some(op) = UlamOperator::from_finite(system) else {
        return config_err("bounded_ldt: sup_phi and sup_psi are required unless the system is finite");
    };
    let values = obs.state_values().expect("finite systems take tabular observables");
    let phi = op.center(&values);
    let psi = solve_poisson_direct(&op, &phi).map_err(runtime)?;
    let sup_phi = phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((sup_phi, psi.sup_psi()))
}

fn resolve_bounds(config: &ExperimentConfig, system: Option<&MarkovSystem>) -> Result<Vec<(BoundFamily, f64)>> {
    if config.bounds.is_empty() {
        return config_err("`bounds` must list at least one bound");
    }
    config
        .bounds
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let family = match *spec {
                BoundSpec::AzumaHoeffding { c, .. } => BoundFamily::AzumaHoeffding { c },
                BoundSpec::BoundedLdt { sup_phi, sup_psi, .. } => match (sup_phi, sup_psi) {
                    (Some(sup_phi), Some(sup_psi)) => BoundFamily::BoundedLdt { sup_phi, sup_psi },
                    _ => {
                        let Some(system) = system else {
                            return config_err(format!("bounds[{k}]: bounded_ldt needs sup_phi and sup_psi"));
                        };
                        let obs = config.build_observable(system)?;
                        let (p, s) = derived_bounded_constants(system, &obs)?;
                        BoundFamily::BoundedLdt {
                            sup_phi: sup_phi.unwrap_or(p),
                            sup_psi: sup_psi.unwrap_or(s),
                        }
                    }
                },
                BoundSpec::UnboundedLdt {
                    alpha,
                    c_burk,
                    norm_phi2_l2,
                    two_sided,
                    ..
                } => BoundFamily::UnboundedLdt {
                    alpha,
                    c_burk,
                    norm_phi2_l2,
                    two_sided,
                },
                BoundSpec::TentCorollary { .. } => BoundFamily::TentCorollary,
                BoundSpec::ExpandingLdt { c_eps, .. } => BoundFamily::ExpandingLdt { c_eps },
            };
            // evaluate once to surface invalid constants as config errors
            family
                .evaluate(1, 1.0)
                .map_err(|e| ExperimentError::Config(format!("bounds[{k}]: {e}")))?;
            Ok((family, spec.rate_multiplier()))
        })
        .collect()
}

fn evaluate_grid(family: &BoundFamily, rate: f64, ns: &[u64], eps: &[f64]) -> Result<Vec<BoundResult>> {
    let mut out = Vec::with_capacity(ns.len() * eps.len());
    for &n in ns {
        for &e in eps {
            out.push(
                family
                    .evaluate_with_rate(n, e, rate)
                    .map_err(|err| ExperimentError::Config(format!("{} at n={n}, eps={e}: {err}", family.name())))?,
            );
        }
    }
    Ok(out)
}

fn run_bound(config: &ExperimentConfig) -> Result<RunOutput> {
    let (ns, eps) = config.grid()?;
    let needs_system = config.bounds.iter().any(|b| {
        matches!(
            b,
            BoundSpec::BoundedLdt { sup_phi: None, .. } | BoundSpec::BoundedLdt { sup_psi: None, .. }
        )
    });
    let system = if needs_system {
        Some(config.build_system()?)
    } else {
        None
    };
    let families = resolve_bounds(config, system.as_ref())?;
    let mut csv = format!("{BOUND_CSV_HEADER}\n");
    for (family, rate) in &families {
        for b in evaluate_grid(family, *rate, ns, eps)? {
            csv.push_str(&bound_csv_row(family.name(), &b));
            csv.push('\n');
        }
    }
    Ok(RunOutput::single("bound", csv))
}

fn run_verify(config: &ExperimentConfig) -> Result<RunOutput> {
    let (ns, eps) = config.grid()?;
    let system = config.build_system()?;
    let obs = config.build_observable(&system)?;
    let families = resolve_bounds(config, Some(&system))?;
    let ns_usize = to_usize(ns);

    let exact = if system.is_finite() {
        let n_max = *ns_usize.iter().max().expect("non-empty grid");
        match exact_deviation_profile(&system, &obs, n_max, eps) {
            Ok(profile) => Some(profile),
            Err(MonteCarloError::NonLattice | MonteCarloError::LatticeOverflow { .. }) if config.trials.is_some() => None,
            Err(e) => return Err(runtime(e)),
        }
    } else {
        None
    };
    let empirical = match (config.trials, &exact) {
        (None, Some(_)) => None,
        _ => {
            let trials = config.trials()?;
            Some(
                estimate_grid(&system, &obs, &ns_usize, eps, trials, config.master_seed, config.ci_level)
                    .map_err(runtime)?,
            )
        }
    };

    let mut estimates = Vec::with_capacity(ns.len() * eps.len());
    for (i, &n) in ns_usize.iter().enumerate() {
        for (j, _) in eps.iter().enumerate() {
            let ex = exact.as_ref().map(|p| p[n - 1][j].clone());
            let mc = empirical.as_ref().map(|m| m[i * eps.len() + j].clone());
            estimates.push(match (mc, ex) {
                (Some(m), Some(e)) => Estimate::Both(m, e),
                (Some(m), None) => Estimate::Empirical(m),
                (None, Some(e)) => Estimate::Exact(e),
                (None, None) => unreachable!("one estimate source is always present"),
            });
        }
    }

    let mut csv = format!("{STUDY_CSV_HEADER}\n");
    let mut failures = 0;
    for (family, rate) in &families {
        let bounds = evaluate_grid(family, *rate, ns, eps)?;
        let report = domination_study(family.name(), &bounds, &estimates).map_err(runtime)?;
        failures += report.fail;
        csv.push_str(report.to_csv().split_once('\n').map_or("", |(_, rows)| rows));
    }
    Ok(RunOutput {
        artifacts: vec![("verify".to_string(), csv)],
        outcome: if failures > 0 {
            Outcome::DominationFailure
        } else {
            Outcome::Ok
        },
    })
}

fn operator_for(system: &MarkovSystem, cells: usize) -> Result<UlamOperator> {
    UlamOperator::for_system(system, cells).map_err(|e| ExperimentError::Config(e.to_string()))
}

fn discretize(system: &MarkovSystem, obs: &Observable, op: &UlamOperator) -> Result<Vec<f64>> {
    match obs.state_values() {
        Some(v) => Ok(v),
        None => obs.cell_averages(system, op.dim()).map_err(runtime),
    }
}

fn run_ulam(config: &ExperimentConfig) -> Result<RunOutput> {
    let system = config.build_system()?;
    let cells = config.ulam.as_ref().map_or(4, |u| u.cells);
    let op = operator_for(&system, cells)?;
    Ok(RunOutput::single("ulam", op.to_csv()))
}

fn run_psi(config: &ExperimentConfig) -> Result<RunOutput> {
    let system = config.build_system()?;
    let obs = config.build_observable(&system)?;
    let spec = config.poisson.clone().unwrap_or(PoissonSpec {
        cells: default_cells(),
        tol: default_tol(),
        mixing_steps: default_mixing_steps(),
    });
    if !(spec.tol > 0.0) {
        return config_err("poisson.tol must be positive");
    }
    let op = operator_for(&system, spec.cells)?;
    let phi = op.center(&discretize(&system, &obs, &op)?);
    let sol = solve_poisson(&op, &phi, spec.tol).map_err(runtime)?;

    let mut csv = String::from("cell,phi,psi,q_psi,residual\n");
    for (i, f) in phi.iter().enumerate() {
        let r = (f - (sol.psi[i] - sol.q_psi[i])).abs();
        csv.push_str(&format!("{i},{f},{},{},{r}\n", sol.psi[i], sol.q_psi[i]));
    }
    let mut mixing = String::from("k,rate,fit\n");
    if phi.iter().any(|x| *x != 0.0) {
        let profile = mixing_profile(&op, std::slice::from_ref(&phi), spec.mixing_steps).map_err(runtime)?;
        for (k, r) in profile.rates.iter().enumerate() {
            let fit = profile
                .exponential_fit
                .map(|f| (f.c * (-f.theta * (k + 1) as f64).exp()).to_string())
                .unwrap_or_default();
            mixing.push_str(&format!("{},{r},{fit}\n", k + 1));
        }
    }
    Ok(RunOutput {
        artifacts: vec![("psi".into(), csv), ("mixing".into(), mixing)],
        outcome: Outcome::Ok,
    })
}

fn run_tails(config: &ExperimentConfig) -> Result<RunOutput> {
    let system = config.build_system()?;
    let obs = config.build_observable(&system)?;
    let spec = config.tails.clone().unwrap_or(TailsSpec {
        samples: default_samples(),
        quantile_floor: default_quantile(),
        level_m: None,
        cells: default_cells(),
        n_max: default_tail_steps(),
    });
    let samples = sample_observable(&system, &obs, spec.samples, config.master_seed).map_err(runtime)?;
    let fit = fit_exponential_tail(&samples, spec.quantile_floor).map_err(|e| match e {
        crate::truncation::TruncationError::TooFewSamples(_) | crate::truncation::TruncationError::InvalidQuantile(_) => {
            ExperimentError::Config(format!("tails: {e}"))
        }
        other => runtime(other),
    })?;
    let csv = format!(
        "samples,c1,alpha,t_min,t_max,max_abs_log_residual,inflation\n{},{},{},{},{},{},{}\n",
        spec.samples, fit.c1, fit.alpha, fit.fit_range.0, fit.fit_range.1, fit.max_abs_log_residual, fit.inflation
    );
    let mut artifacts = vec![("tails".to_string(), csv)];

    if let Some(level) = spec.level_m {
        if !(level > 0.0) {
            return config_err("tails.level_m must be positive");
        }
        let op = operator_for(&system, spec.cells)?;
        let tail = obs.truncated(level, TruncationPart::Tail);
        let tau = discretize(&system, &tail, &op)?;
        let raw = l2_tail_control(&op, &tau, spec.n_max, false).map_err(runtime)?;
        let centered = l2_tail_control(&op, &tau, spec.n_max, true).map_err(runtime)?;
        let mut trace = String::from("m,uncentered,centered\n");
        for (k, (u, c)) in raw.partial_sums.iter().zip(&centered.partial_sums).enumerate() {
            trace.push_str(&format!("{},{u},{c}\n", k + 1));
        }
        artifacts.push(("l2tail".to_string(), trace));
    }
    Ok(RunOutput {
        artifacts,
        outcome: Outcome::Ok,
    })
}
