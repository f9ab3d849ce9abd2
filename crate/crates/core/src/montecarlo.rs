//! Empirical and exact deviation probabilities, and bound domination studies.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::bounds::BoundResult;
use crate::systems::{
    deviation_indicator, exceeds, simulate_batch, MarkovSystem, Observable, ObservableKind, SystemError,
};

/// Largest denominator tried when placing observable values on a lattice.
pub const MAX_DENOMINATOR: u64 = 10_000;
/// Largest dynamic-programming table accepted, in cells.
pub const MAX_TABLE_CELLS: u128 = 100_000_000;
/// Minimum number of trials for an estimate.
pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("need at least {MIN_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("ci_level must lie in (0,1), got {0}")]
    InvalidLevel(f64),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("observable values are not on a common lattice with denominator <= {MAX_DENOMINATOR}")]
    NonLattice,
    #[error("dynamic program needs {cells} table cells (limit {MAX_TABLE_CELLS})")]
    LatticeOverflow { cells: u128 },
    #[error("the exact oracle needs a finite chain with a tabular observable")]
    NotFinite,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

/// Solves `I_x(a, b) = target` for `x` by bisection.
fn inverse_beta_reg(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) binomial interval for `hits` successes out of
/// `trials` at confidence `level`.
pub fn clopper_pearson(hits: usize, trials: usize, level: f64) -> (f64, f64) {
    assert!(hits <= trials && trials > 0, "hits must not exceed trials");
    let alpha = 1.0 - level;
    let (k, n) = (hits as f64, trials as f64);
    let lo = if hits == 0 {
        0.0
    } else {
        inverse_beta_reg(k, n - k + 1.0, alpha / 2.0)
    };
    let hi = if hits == trials {
        1.0
    } else {
        inverse_beta_reg(k + 1.0, n - k, 1.0 - alpha / 2.0)
    };
    let p = k / n;
    (lo.min(p), hi.max(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub n: u64,
    pub eps: f64,
    pub hits: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub ci_level: f64,
    pub ci: (f64, f64),
    pub master_seed: u64,
}

impl MonteCarloEstimate {
    fn new(n: u64, eps: f64, hits: usize, trials: usize, ci_level: f64, master_seed: u64) -> Self {
        MonteCarloEstimate {
            n,
            eps,
            hits,
            trials,
            p_hat: hits as f64 / trials as f64,
            ci_level,
            ci: clopper_pearson(hits, trials, ci_level),
            master_seed,
        }
    }
}

fn check_estimate_args(trials: usize, ci_level: f64, eps: &[f64]) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(MonteCarloError::TooFewTrials(trials));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(MonteCarloError::InvalidLevel(ci_level));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(MonteCarloError::InvalidArgument(format!("eps must be positive, got {e}")));
    }
    Ok(())
}

/// Estimates `P_μ(|S_n/n − ∫φ dμ| > eps)` from `trials` stationary
/// trajectories.
pub fn estimate_deviation(
    system: &MarkovSystem,
    observable: &Observable,
    n: usize,
    eps: f64,
    trials: usize,
    master_seed: u64,
    ci_level: f64,
) -> Result<MonteCarloEstimate> {
    let mut out = estimate_grid(system, observable, &[n], &[eps], trials, master_seed, ci_level)?;
    Ok(out.remove(0))
}

/// Estimates over an `(n, eps)` grid. One batch is simulated per `n` and
/// reused for every `eps`, so hit counts are nonincreasing in `eps`.
/// Results are ordered by `n`, then `eps`, as given.
pub fn estimate_grid(
    system: &MarkovSystem,
    observable: &Observable,
    ns: &[usize],
    eps: &[f64],
    trials: usize,
    master_seed: u64,
    ci_level: f64,
) -> Result<Vec<MonteCarloEstimate>> {
    check_estimate_args(trials, ci_level, eps)?;
    let mean = observable.mean(system)?;
    let mut out = Vec::with_capacity(ns.len() * eps.len());
    for &n in ns {
        let batch = simulate_batch(system, observable, n, trials, master_seed)?;
        for &e in eps {
            let hits = deviation_indicator(&batch, mean, e);
            out.push(MonteCarloEstimate::new(n as u64, e, hits, trials, ci_level, master_seed));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDeviation {
    pub n: u64,
    pub eps: f64,
    pub probability: f64,
    /// Lattice spacing `1/den` of the observable values.
    pub support_resolution: f64,
}

/// Integer representation `v_i = (base + k_i)/den` with `k_i ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
struct Lattice {
    den: u64,
    base: i64,
    steps: Vec<usize>,
}

fn lattice_of(values: &[f64]) -> Result<Lattice> {
    for den in 1..=MAX_DENOMINATOR {
        let d = den as f64;
        let scaled: Vec<f64> = values.iter().map(|v| v * d).collect();
        let on_lattice = scaled
            .iter()
            .all(|s| (s - s.round()).abs() <= 1e-9 * s.abs().max(1.0));
        if on_lattice {
            let ints: Vec<i64> = scaled.iter().map(|s| s.round() as i64).collect();
            let base = *ints.iter().min().unwrap_or(&0);
            return Ok(Lattice {
                den,
                base,
                steps: ints.iter().map(|k| (k - base) as usize).collect(),
            });
        }
    }
    Err(MonteCarloError::NonLattice)
}

fn finite_parts<'a>(system: &'a MarkovSystem, observable: &Observable) -> Result<(&'a crate::systems::StochasticMatrix, &'a [f64], Vec<f64>)> {
    let (m, w) = match (system.matrix(), system.stationary_vector()) {
        (Some(m), Some(w)) => (m, w),
        _ => return Err(MonteCarloError::NotFinite),
    };
    if !matches!(observable.kind(), ObservableKind::Tabular(_)) {
        return Err(MonteCarloError::NotFinite);
    }
    observable.check_compatible(system)?;
    Ok((m, w, observable.state_values().expect("tabular")))
}

/// Exact deviation probabilities for every `n` in `1..=n_max` and every
/// `eps`, from one forward pass. Entry `[n-1][e]` is for `(n, eps[e])`.
///
/// The distribution of `S_n` is propagated on the integer lattice of the
/// observable values, starting from the stationary law.
pub fn exact_deviation_profile(
    system: &MarkovSystem,
    observable: &Observable,
    n_max: usize,
    eps: &[f64],
) -> Result<Vec<Vec<ExactDeviation>>> {
    if n_max == 0 {
        return Err(MonteCarloError::InvalidArgument("n must be positive".into()));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(MonteCarloError::InvalidArgument(format!("eps must be positive, got {e}")));
    }
    let (matrix, weights, values) = finite_parts(system, observable)?;
    let lattice = lattice_of(&values)?;
    let states = values.len();
    let span = lattice.steps.iter().copied().max().unwrap_or(0);
    let width = n_max * span + 1;
    let cells = n_max as u128 * states as u128 * width as u128;
    if cells > MAX_TABLE_CELLS {
        return Err(MonteCarloError::LatticeOverflow { cells });
    }
    let mean = observable.mean(system)?;
    let den = lattice.den as f64;

    // table[s * width + k]: P(Z_n = s, Σ steps = k)
    let mut table = vec![0.0f64; states * width];
    for s in 0..states {
        table[s * width + lattice.steps[s]] = weights[s];
    }
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if n > 1 {
            let mut next = vec![0.0f64; states * width];
            let used = (n - 1) * span + 1;
            for s in 0..states {
                let src = &table[s * width..s * width + used];
                for t in 0..states {
                    let p = matrix.get(s, t);
                    if p == 0.0 {
                        continue;
                    }
                    let off = t * width + lattice.steps[t];
                    for (dst, q) in next[off..off + used].iter_mut().zip(src) {
                        *dst += p * q;
                    }
                }
            }
            table = next;
        }
        let nf = n as f64;
        let used = (n - 1) * span + lattice.steps.iter().copied().max().unwrap_or(0) + 1;
        let marginal: Vec<f64> = (0..used.min(width))
            .map(|k| (0..states).map(|s| table[s * width + k]).sum())
            .collect();
        out.push(
            eps.iter()
                .map(|&e| {
                    let probability: f64 = marginal
                        .iter()
                        .enumerate()
                        .filter(|(k, p)| {
                            **p > 0.0 && {
                                let avg = (lattice.base as f64 * nf + *k as f64) / (den * nf);
                                exceeds(avg - mean, e)
                            }
                        })
                        .map(|(_, p)| *p)
                        .fold(0.0, |a, b| a + b);
                    ExactDeviation {
                        n: n as u64,
                        eps: e,
                        probability: probability.clamp(0.0, 1.0),
                        support_resolution: 1.0 / den,
                    }
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Exact `P_μ(|S_n/n − ∫φ dμ| > eps)` for a finite chain whose observable
/// takes values on a rational lattice.
pub fn exact_deviation_dp(system: &MarkovSystem, observable: &Observable, n: usize, eps: f64) -> Result<ExactDeviation> {
    let mut profile = exact_deviation_profile(system, observable, n, &[eps])?;
    Ok(profile.pop().expect("n >= 1").remove(0))
}

/// A deviation probability against which a bound is checked.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Empirical(MonteCarloEstimate),
    Exact(ExactDeviation),
    Both(MonteCarloEstimate, ExactDeviation),
}

impl Estimate {
    pub fn point(&self) -> (u64, f64) {
        match self {
            Estimate::Empirical(m) | Estimate::Both(m, _) => (m.n, m.eps),
            Estimate::Exact(e) => (e.n, e.eps),
        }
    }

    /// The value a bound must reach: the exact probability if known,
    /// otherwise the upper confidence limit.
    pub fn target(&self) -> f64 {
        match self {
            Estimate::Exact(e) | Estimate::Both(_, e) => e.probability,
            Estimate::Empirical(m) => m.ci.1,
        }
    }

    pub fn empirical(&self) -> Option<&MonteCarloEstimate> {
        match self {
            Estimate::Empirical(m) | Estimate::Both(m, _) => Some(m),
            Estimate::Exact(_) => None,
        }
    }

    pub fn exact(&self) -> Option<&ExactDeviation> {
        match self {
            Estimate::Exact(e) | Estimate::Both(_, e) => Some(e),
            Estimate::Empirical(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
    /// `n` is below the bound's threshold, so the bound claims nothing.
    BelowThreshold,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Vacuous => "VACUOUS",
            Verdict::BelowThreshold => "BELOW_THRESHOLD",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub bound: BoundResult,
    pub estimate: Estimate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DominationReport {
    pub family: String,
    pub rows: Vec<StudyRow>,
    pub pass: usize,
    pub fail: usize,
    pub vacuous: usize,
    pub below_threshold: usize,
}

pub fn verdict(bound: &BoundResult, estimate: &Estimate) -> Verdict {
    if !bound.valid {
        Verdict::BelowThreshold
    } else if bound.value >= 1.0 {
        Verdict::Vacuous
    } else if bound.value >= estimate.target() {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Pairs bounds and estimates by `(n, eps)` and assigns a verdict to each
/// grid point. Both lists must cover the same points.
pub fn domination_study(family: &str, bounds: &[BoundResult], estimates: &[Estimate]) -> Result<DominationReport> {
    if bounds.len() != estimates.len() {
        return Err(MonteCarloError::GridMismatch(format!(
            "{} bounds for {} estimates",
            bounds.len(),
            estimates.len()
        )));
    }
    let mut report = DominationReport {
        family: family.to_string(),
        ..Default::default()
    };
    for b in bounds {
        let est = estimates
            .iter()
            .find(|e| e.point() == (b.n, b.eps))
            .ok_or_else(|| MonteCarloError::GridMismatch(format!("no estimate at n={}, eps={}", b.n, b.eps)))?;
        let v = verdict(b, est);
        match v {
            Verdict::Pass => report.pass += 1,
            Verdict::Fail => report.fail += 1,
            Verdict::Vacuous => report.vacuous += 1,
            Verdict::BelowThreshold => report.below_threshold += 1,
        }
        report.rows.push(StudyRow {
            bound: b.clone(),
            estimate: est.clone(),
            verdict: v,
        });
    }
    Ok(report)
}

pub const STUDY_CSV_HEADER: &str = "family,n,eps,p_hat,ci_low,ci_high,exact,bound_raw,bound,verdict";

impl DominationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(STUDY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (p, lo, hi) = match r.estimate.empirical() {
                Some(m) => (m.p_hat.to_string(), m.ci.0.to_string(), m.ci.1.to_string()),
                None => Default::default(),
            };
            let exact = r
                .estimate
                .exact()
                .map(|e| e.probability.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{p},{lo},{hi},{exact},{},{},{}\n",
                self.family,
                r.bound.n,
                r.bound.eps,
                r.bound.raw_value,
                r.bound.value,
                r.verdict.as_str()
            ));
        }
        out
    }
}

pub const ESTIMATE_CSV_HEADER: &str = "n,eps,hits,trials,p_hat,ci_low,ci_high,ci_level,master_seed";

pub fn estimate_csv_row(m: &MonteCarloEstimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        m.n, m.eps, m.hits, m.trials, m.p_hat, m.ci.0, m.ci.1, m.ci_level, m.master_seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{bounded_ldt, BoundFamily};
    use crate::systems::{build_finite_chain, build_tent_system};

    fn coin() -> MarkovSystem {
        build_finite_chain(&[vec![0.5, 0.5], vec![0.5, 0.5]], None).unwrap()
    }

    #[test]
    fn clopper_pearson_edges() {
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        // 1 − 0.025^{1/10}
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-12);
        let (lo, hi) = clopper_pearson(10, 10, 0.95);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-12);
        assert_eq!(hi, 1.0);
        let (lo, hi) = clopper_pearson(50, 100, 0.95);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((lo - 0.398321).abs() < 1e-5 && (hi - 0.601679).abs() < 1e-5);
    }

    #[test]
    fn coin_examples() {
        let phi = Observable::tabular(vec![-0.5, 0.5]);
        let e = exact_deviation_dp(&coin(), &phi, 2, 0.4).unwrap();
        assert_eq!(e.probability, 0.5);
        assert_eq!(exact_deviation_dp(&coin(), &phi, 2, 0.5).unwrap().probability, 0.0);
        let m = estimate_deviation(&coin(), &phi, 2, 0.4, 100_000, 7, 0.99).unwrap();
        assert!(m.ci.0 <= 0.5 && 0.5 <= m.ci.1, "{m:?}");
        let c = estimate_deviation(&coin(), &Observable::tabular(vec![2.0, 2.0]), 5, 1e-3, 1000, 7, 0.99).unwrap();
        assert_eq!(c.hits, 0);
        assert_eq!(c.p_hat, 0.0);
    }

    #[test]
    fn eight_path_enumeration() {
        let sys = build_finite_chain(&[vec![0.7, 0.3], vec![0.1, 0.9]], None).unwrap();
        let w = [0.25, 0.75];
        let p = [[0.7, 0.3], [0.1, 0.9]];
        let v = [1.0, -1.0];
        let mean: f64 = 0.25 - 0.75;
        let mut want = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let s = (v[a] + v[b] + v[c]) / 3.0;
                    if (s - mean).abs() > 0.9 {
                        want += w[a] * p[a][b] * p[b][c];
                    }
                }
            }
        }
        let got = exact_deviation_dp(&sys, &Observable::tabular(v.to_vec()), 3, 0.9).unwrap();
        assert!((got.probability - want).abs() < 1e-15, "{} vs {want}", got.probability);
    }

    #[test]
    fn dp_errors() {
        let irr = Observable::tabular(vec![std::f64::consts::PI, 0.0]);
        assert_eq!(exact_deviation_dp(&coin(), &irr, 3, 0.1), Err(MonteCarloError::NonLattice));
        let wide = Observable::tabular(vec![0.0, 1000.0]);
        assert!(matches!(
            exact_deviation_dp(&coin(), &wide, 2000, 0.1),
            Err(MonteCarloError::LatticeOverflow { .. })
        ));
        assert_eq!(
            exact_deviation_dp(&build_tent_system(), &Observable::log(), 3, 0.1),
            Err(MonteCarloError::NotFinite)
        );
    }

    #[test]
    fn hits_nonincreasing_in_eps() {
        let sys = build_finite_chain(&[vec![0.7, 0.3], vec![0.1, 0.9]], None).unwrap();
        let phi = Observable::tabular(vec![1.0, -1.0]);
        let eps = [0.05, 0.1, 0.2, 0.4, 0.8];
        let est = estimate_grid(&sys, &phi, &[10, 40], &eps, 2000, 3, 0.95).unwrap();
        for pair in est.windows(2) {
            if pair[0].n == pair[1].n {
                assert!(pair[1].hits <= pair[0].hits);
            }
        }
        assert!(matches!(
            estimate_grid(&sys, &phi, &[10], &eps, 10, 3, 0.95),
            Err(MonteCarloError::TooFewTrials(10))
        ));
    }

    #[test]
    fn study_verdicts() {
        let sys = build_finite_chain(&[vec![0.7, 0.3], vec![0.1, 0.9]], None).unwrap();
        let phi = Observable::tabular(vec![1.0, -1.0]);
        let profile = exact_deviation_profile(&sys, &phi, 30, &[0.5]).unwrap();
        let family = BoundFamily::BoundedLdt {
            sup_phi: 1.5,
            sup_psi: 3.75,
        };
        let bounds: Vec<_> = (1..=30).map(|n| family.evaluate(n, 0.5).unwrap()).collect();
        let est: Vec<_> = profile.iter().map(|row| Estimate::Exact(row[0].clone())).collect();
        let report = domination_study("bounded_ldt", &bounds, &est).unwrap();
        assert_eq!(report.fail, 0);
        assert_eq!(report.below_threshold, 29);
        assert_eq!(report.vacuous, 1);
        assert!(domination_study("x", &bounds[..3], &est).is_err());
        let csv = report.to_csv();
        assert!(csv.starts_with(STUDY_CSV_HEADER));
        assert!(csv.contains(",VACUOUS\n"));
        let tiny = bounded_ldt(5, 1e-9, 1.0, 1e-12).unwrap();
        assert_eq!(
            verdict(&tiny, &Estimate::Exact(ExactDeviation { n: 5, eps: 1e-9, probability: 0.3, support_resolution: 1.0 })),
            Verdict::Vacuous
        );
    }
}
