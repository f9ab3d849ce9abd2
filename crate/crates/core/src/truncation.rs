//! Truncation of unbounded observables, tail estimates, and the martingale
//! decomposition of Birkhoff sums.

use thiserror::Error;

use crate::operator::{OperatorError, PoissonSolution, UlamOperator};
use crate::systems::{
    compensated_sum, simulate_batch, MarkovSystem, Observable, State, SystemError, TruncationPart,
};

/// Minimum sample size accepted by [`fit_exponential_tail`].
pub const MIN_TAIL_SAMPLES: usize = 1000;
/// Minimum number of samples above the fit floor.
pub const MIN_TAIL_EXCEEDANCES: usize = 50;
/// Grid points used for the survival regression.
pub const TAIL_FIT_POINTS: usize = 200;
/// Default number of bins in the empirical martingale check.
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TruncationError {
    #[error("truncation level must be positive, got {0}")]
    InvalidLevel(f64),
    #[error("z = {z} is within e^-M = {reach} of an endpoint")]
    BoundaryTooClose { z: f64, reach: f64 },
    #[error("need at least {MIN_TAIL_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("quantile floor must lie in (0,1), got {0}")]
    InvalidQuantile(f64),
    #[error("only {above} samples above t_min = {t_min}")]
    InsufficientTail { above: usize, t_min: f64 },
    #[error("Poisson solution does not match the operator: {0}")]
    UnsolvedPoisson(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("state {0:?} cannot be located on the operator's cells")]
    UnmappedState(State),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Result<T> = std::result::Result<T, TruncationError>;

/// `φ = φ_M + R_M` with `φ_M = φ·𝟙{φ ≤ M}` and `R_M = φ·𝟙{φ > M}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationPair {
    pub level_m: f64,
    pub bounded_part: Observable,
    pub tail_part: Observable,
    /// Stationary mean of the tail part.
    pub tail_mean: f64,
}

impl TruncationPair {
    /// Tail part minus its stationary mean.
    pub fn centered_tail(&self, system: &MarkovSystem) -> Result<Observable> {
        Ok(self.tail_part.centered(system)?)
    }
}

/// Splits `φ` at level `M`; ties `φ = M` go to the bounded part.
pub fn decompose(observable: &Observable, system: &MarkovSystem, level_m: f64) -> Result<TruncationPair> {
    if !(level_m > 0.0) {
        return Err(TruncationError::InvalidLevel(level_m));
    }
    let bounded_part = observable.truncated(level_m, TruncationPart::Bounded);
    let tail_part = observable.truncated(level_m, TruncationPart::Tail);
    let tail_mean = tail_part.mean(system)?;
    Ok(TruncationPair {
        level_m,
        bounded_part,
        tail_part,
        tail_mean,
    })
}

/// Second moment of the log-distance tail next to the reference bound
/// `4C_μ(M+1)e^{−M}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMoment {
    pub level_m: f64,
    /// `C_μ ∫_{φ>M} φ² dx`.
    pub exact: f64,
    /// `4 C_μ (M+1) e^{−M}`.
    pub reference_bound: f64,
}

impl TailMoment {
    pub fn exceeds_reference_bound(&self) -> bool {
        self.exact > self.reference_bound
    }
}

/// `∫_0^r log² u du = r (log² r − 2 log r + 2)`.
fn one_sided_log_square(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let l = r.ln();
    r * (l * l - 2.0 * l + 2.0)
}

/// `2e^{−M}(M² + 2M + 2)`: the tail moment of `|log|x − z||` when both
/// sides of the singular set fit inside the domain.
pub fn two_sided_tail_moment(level_m: f64) -> f64 {
    2.0 * (-level_m).exp() * (level_m * level_m + 2.0 * level_m + 2.0)
}

/// `∫_{φ>M} φ² dx` for `φ = |log|x − z||` on `[0,1]`, each side of `z`
/// clipped at the boundary.
pub fn clipped_tail_moment(z: f64, level_m: f64) -> f64 {
    let reach = (-level_m).exp();
    one_sided_log_square(reach.min(z)) + one_sided_log_square(reach.min(1.0 - z))
}

/// Exact tail second moment, scaled by `C_μ`, with the bound `4C_μ(M+1)e^{−M}`.
///
/// The exact value `2e^{−M}(M² + 2M + 2)` is larger than the bound for every
/// `M > 0`. Raises `BoundaryTooClose` if `z` is within `e^{−M}` of an endpoint;
/// use [`clipped_tail_moment`] there.
pub fn tail_l2_moment(z: f64, level_m: f64, c_mu: f64) -> Result<TailMoment> {
    if !(level_m > 0.0) {
        return Err(TruncationError::InvalidLevel(level_m));
    }
    let reach = (-level_m).exp();
    if z < reach || 1.0 - z < reach {
        return Err(TruncationError::BoundaryTooClose { z, reach });
    }
    Ok(TailMoment {
        level_m,
        exact: c_mu * two_sided_tail_moment(level_m),
        reference_bound: 4.0 * c_mu * (level_m + 1.0) * reach,
    })
}

/// Fitted survival bound `μ(φ > t) ≤ C1 e^{−αt}` on `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub c1: f64,
    pub alpha: f64,
    pub fit_range: (f64, f64),
    /// Largest `|log S(t) − log(C1 e^{−αt})|` over the grid, after inflation.
    pub max_abs_log_residual: f64,
    /// Factor by which the least-squares `C1` was raised.
    pub inflation: f64,
}

/// Least-squares fit of the log empirical survival function of `samples`
/// over the upper tail.
///
/// The range starts at the `quantile_floor` quantile and ends where
/// `max(10, n_above/100)` samples remain; the survival function is read on
/// an even grid of [`TAIL_FIT_POINTS`] points. `C1` is then raised until the
/// fitted curve dominates the empirical survival on the grid.
pub fn fit_exponential_tail(samples: &[f64], quantile_floor: f64) -> Result<TailFit> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(TruncationError::TooFewSamples(samples.len()));
    }
    if !(quantile_floor > 0.0 && quantile_floor < 1.0) {
        return Err(TruncationError::InvalidQuantile(quantile_floor));
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len();
    let t_min = sorted[((quantile_floor * (total - 1) as f64).floor() as usize).min(total - 1)];
    let above = |t: f64| total - sorted.partition_point(|x| *x <= t);
    let n_above = above(t_min);
    if n_above < MIN_TAIL_EXCEEDANCES {
        return Err(TruncationError::InsufficientTail {
            above: n_above,
            t_min,
        });
    }
    let keep = (n_above / 100).max(10);
    let t_max = sorted[total - keep];
    if !(t_max > t_min) {
        return Err(TruncationError::InsufficientTail {
            above: n_above,
            t_min,
        });
    }

    let points: Vec<(f64, f64)> = (0..TAIL_FIT_POINTS)
        .map(|k| t_min + (t_max - t_min) * k as f64 / (TAIL_FIT_POINTS - 1) as f64)
        .filter_map(|t| {
            let s = above(t);
            (s > 0).then(|| (t, (s as f64 / total as f64).ln()))
        })
        .collect();
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let excess = points
        .iter()
        .map(|(t, y)| y - (intercept + slope * t))
        .fold(0.0f64, f64::max);
    let lifted = intercept + excess;
    let max_abs_log_residual = points
        .iter()
        .map(|(t, y)| (y - (lifted + slope * t)).abs())
        .fold(0.0, f64::max);
    Ok(TailFit {
        c1: lifted.exp(),
        alpha: -slope,
        fit_range: (t_min, t_max),
        max_abs_log_residual,
        inflation: excess.exp(),
    })
}

/// Partial sums `Σ_{k=1}^m k^{−1/2} ‖Qᵏτ‖_{L²(μ̂)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2TailControl {
    pub partial_sums: Vec<f64>,
    pub bounded: bool,
    pub sup_partial: f64,
}

/// Traces the partial sums for `m = 1..=n_max`, optionally centring `τ`
/// first. The sums count as bounded when the last tenth of them (at least
/// two) vary by less than 1%.
pub fn l2_tail_control(op: &UlamOperator, tail_part: &[f64], n_max: usize, centered: bool) -> Result<L2TailControl> {
    let mut cur = if centered {
        op.check_dim(tail_part)?;
        op.center(tail_part)
    } else {
        tail_part.to_vec()
    };
    let mut partial_sums = Vec::with_capacity(n_max);
    let mut acc = 0.0;
    for k in 1..=n_max {
        cur = op.apply(&cur)?;
        acc += op.l2_norm(&cur) / (k as f64).sqrt();
        partial_sums.push(acc);
    }
    let window = n_max.div_ceil(10).max(2).min(n_max);
    let tail = &partial_sums[n_max - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let bounded = hi <= 0.0 || (hi - lo) < 0.01 * hi;
    let sup_partial = partial_sums.iter().cloned().fold(0.0, f64::max);
    Ok(L2TailControl {
        partial_sums,
        bounded,
        sup_partial,
    })
}

/// Martingale increments `Xᵢ = ψ(Z_{i+1}) − Qψ(Zᵢ)` along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePath {
    pub increments: Vec<f64>,
    /// `(ψ(Z₁), Qψ(Z_n))`.
    pub boundary: (f64, f64),
    /// `Σ Xᵢ + ψ(Z₁) − Qψ(Z_n)`.
    pub reconstructed_sum: f64,
    /// `Σ φ(Zᵢ)` evaluated directly.
    pub direct_sum: f64,
}

impl MartingalePath {
    pub fn telescoping_residual(&self) -> f64 {
        (self.reconstructed_sum - self.direct_sum).abs()
    }
}

fn cell(op: &UlamOperator, s: State) -> Result<usize> {
    let idx = match s {
        State::Index(i) => Some(i).filter(|i| *i < op.dim()),
        State::Point(x) => op.cell_of(x),
    };
    idx.ok_or(TruncationError::UnmappedState(s))
}

fn check_solution(op: &UlamOperator, psi: &PoissonSolution) -> Result<()> {
    if psi.psi.len() != op.dim() || psi.q_psi.len() != op.dim() {
        return Err(TruncationError::UnsolvedPoisson(format!(
            "{} entries for {} cells",
            psi.psi.len(),
            op.dim()
        )));
    }
    if !psi.residual.is_finite() || psi.psi.iter().any(|x| !x.is_finite()) {
        return Err(TruncationError::UnsolvedPoisson("non-finite solution".into()));
    }
    Ok(())
}

/// Evaluates the increments and both sides of
/// `S_nφ = Σ_{i=1}^{n−1} Xᵢ + ψ(Z₁) − Qψ(Z_n)`.
pub fn martingale_path(trajectory: &[State], psi: &PoissonSolution, op: &UlamOperator, phi: &[f64]) -> Result<MartingalePath> {
    check_solution(op, psi)?;
    op.check_dim(phi)?;
    if trajectory.is_empty() {
        return Err(TruncationError::EmptyTrajectory);
    }
    let cells: Vec<usize> = trajectory
        .iter()
        .map(|s| cell(op, *s))
        .collect::<Result<_>>()?;
    let increments: Vec<f64> = cells
        .windows(2)
        .map(|w| psi.psi[w[1]] - psi.q_psi[w[0]])
        .collect();
    let first = psi.psi[cells[0]];
    let last = psi.q_psi[cells[cells.len() - 1]];
    let reconstructed_sum = compensated_sum(
        increments
            .iter()
            .copied()
            .chain([first, -last]),
    );
    let direct_sum = compensated_sum(cells.iter().map(|c| phi[*c]));
    Ok(MartingalePath {
        increments,
        boundary: (first, last),
        reconstructed_sum,
        direct_sum,
    })
}

/// `max_s |Σ_j P_sj ψ_j − Qψ(s)|`: the exact conditional mean of the
/// increment given `Z_i = s`.
pub fn martingale_property_check(op: &UlamOperator, psi: &PoissonSolution) -> Result<f64> {
    check_solution(op, psi)?;
    Ok((0..op.dim())
        .map(|s| {
            let conditional = compensated_sum(op.row(s).iter().zip(&psi.psi).map(|(p, v)| p * v));
            (conditional - psi.q_psi[s]).abs()
        })
        .fold(0.0, f64::max))
}

/// Sample statistics of the increments whose starting state lies in one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    /// Cells `first..last` (exclusive) forming the bin.
    pub cells: (usize, usize),
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl BinStat {
    /// `|mean| / std_err`, zero for a degenerate bin with zero mean.
    pub fn z_score(&self) -> f64 {
        if self.std_err > 0.0 {
            self.mean.abs() / self.std_err
        } else if self.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMartingaleCheck {
    pub bins: Vec<BinStat>,
    pub max_z_score: f64,
    /// Whether every bin mean is within `sigmas` standard errors of 0.
    pub passed: bool,
}

/// Groups consecutive cells into `n_bins` bins of roughly equal stationary
/// mass.
pub fn equal_mass_bins(weights: &[f64], n_bins: usize) -> Vec<(usize, usize)> {
    let len = weights.len();
    let n_bins = n_bins.clamp(1, len.max(1));
    let mut cumulative = Vec::with_capacity(len + 1);
    cumulative.push(0.0);
    for w in weights {
        cumulative.push(cumulative[cumulative.len() - 1] + w);
    }
    let total = cumulative[len];
    let mut cuts = vec![0usize];
    for k in 1..n_bins {
        let target = total * k as f64 / n_bins as f64 * (1.0 - 1e-12);
        let first = cumulative.partition_point(|c| *c < target);
        let prev = cuts[cuts.len() - 1];
        cuts.push(first.max(prev + 1).min(len - (n_bins - k)));
    }
    cuts.push(len);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Empirical conditional means of `Xᵢ` given the bin of `Zᵢ`, from
/// `n_samples` independent stationary pairs `(Zᵢ, Z_{i+1})`.
///
/// Bins are unions of whole cells, so each bin's conditional mean is exactly
/// zero under the discretized chain.
pub fn empirical_martingale_check(
    system: &MarkovSystem,
    op: &UlamOperator,
    psi: &PoissonSolution,
    n_samples: usize,
    n_bins: usize,
    seed: u64,
    sigmas: f64,
) -> Result<EmpiricalMartingaleCheck> {
    check_solution(op, psi)?;
    let batch = simulate_batch(system, &Observable::constant(0.0), 2, n_samples, seed)?;
    let bins = equal_mass_bins(op.weights(), n_bins);
    let mut bin_of = vec![0usize; op.dim()];
    for (b, (lo, hi)) in bins.iter().enumerate() {
        bin_of[*lo..*hi].iter_mut().for_each(|x| *x = b);
    }
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); bins.len()];
    for (z0, z1) in &batch.endpoints {
        let (c0, c1) = (cell(op, *z0)?, cell(op, *z1)?);
        let x = psi.psi[c1] - psi.q_psi[c0];
        let s = &mut sums[bin_of[c0]];
        s.0 += 1;
        s.1 += x;
        s.2 += x * x;
    }
    let stats: Vec<BinStat> = bins
        .iter()
        .zip(&sums)
        .map(|(cells, (count, sum, sq))| {
            let n = *count as f64;
            let (mean, std_err) = if *count >= 2 {
                let mean = sum / n;
                let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
                (mean, (var / n).sqrt())
            } else {
                (0.0, 0.0)
            };
            BinStat {
                cells: *cells,
                count: *count,
                mean,
                std_err,
            }
        })
        .collect();
    let max_z_score = stats.iter().map(BinStat::z_score).fold(0.0, f64::max);
    Ok(EmpiricalMartingaleCheck {
        passed: max_z_score <= sigmas,
        bins: stats,
        max_z_score,
    })
}

/// CSV lines `m,partial_sum` for an L² tail trace.
pub fn l2_tail_csv(control: &L2TailControl) -> String {
    let mut out = String::from("m,partial_sum\n");
    for (k, s) in control.partial_sums.iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{solve_poisson, solve_poisson_direct, ulam_discretize};
    use crate::systems::{build_finite_chain, build_tent_system, Density, build_iid_system, sample_observable};

    #[test]
    fn bounded_observable_has_empty_tail() {
        let tent = build_tent_system();
        let phi = Observable::affine(1.0, 0.0);
        let pair = decompose(&phi, &tent, 2.0).unwrap();
        assert_eq!(pair.tail_mean, 0.0);
        for x in [0.0, 0.3, 0.99, 1.0] {
            assert_eq!(pair.tail_part.eval_point(x), 0.0);
            assert_eq!(pair.bounded_part.eval_point(x), phi.eval_point(x));
        }
        assert!(decompose(&phi, &tent, 0.0).is_err());
    }

    #[test]
    fn log_distance_tail_region_and_mean() {
        let tent = build_tent_system();
        let phi = Observable::log_distance(0.5);
        let pair = decompose(&phi, &tent, 1.0).unwrap();
        let r = (-1.0f64).exp();
        assert!(pair.tail_part.eval_point(0.5 + 0.99 * r) > 1.0);
        assert_eq!(pair.tail_part.eval_point(0.5 + 1.01 * r), 0.0);
        assert!((pair.tail_mean - 2.0 * 2.0 * r).abs() < 1e-14);
        let pair = decompose(&phi, &tent, 3.0).unwrap();
        assert!((pair.tail_mean - 2.0 * 4.0 * (-3.0f64).exp()).abs() < 1e-14);
        for x in [0.01, 0.2, 0.49, 0.5 + 1e-3, 0.9] {
            assert_eq!(
                pair.bounded_part.eval_point(x) + pair.tail_part.eval_point(x),
                phi.eval_point(x)
            );
        }
        assert!(pair.centered_tail(&tent).unwrap().mean(&tent).unwrap().abs() < 1e-15);
    }

    #[test]
    fn tail_moment_values() {
        let m2 = tail_l2_moment(0.5, 2.0, 1.0).unwrap();
        assert!((m2.exact - 20.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert!((m2.exact - 2.7067).abs() < 1e-4);
        assert!((m2.reference_bound - 1.6240).abs() < 1e-4);
        assert!(m2.exceeds_reference_bound());
        assert_eq!(two_sided_tail_moment(0.0), 4.0);
        assert!(tail_l2_moment(0.5, 60.0, 1.0).unwrap().exact < 1e-20);
        assert!(matches!(
            tail_l2_moment(0.1, 1.0, 1.0),
            Err(TruncationError::BoundaryTooClose { .. })
        ));
        // one side clipped at 0: ∫_0^{0.1} log² + ∫_0^{e^{-1}} log²
        let clipped = clipped_tail_moment(0.1, 1.0);
        let want = one_sided_log_square(0.1) + 5.0 * (-1.0f64).exp();
        assert!((clipped - want).abs() < 1e-14);
        assert!((clipped_tail_moment(0.5, 2.0) - m2.exact).abs() < 1e-14);
    }

    #[test]
    fn tail_fit_on_log_samples() {
        let tent = build_tent_system();
        let samples = sample_observable(&tent, &Observable::log_distance(0.0), 200_000, 5).unwrap();
        let fit = fit_exponential_tail(&samples, 0.5).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.c1 - 1.0).abs() < 0.2, "{fit:?}");
        assert!(fit.inflation >= 1.0);
    }

    #[test]
    fn tail_fit_errors() {
        let bounded: Vec<f64> = (0..2000).map(|i| (i % 7) as f64).collect();
        assert!(matches!(
            fit_exponential_tail(&bounded, 0.999),
            Err(TruncationError::InsufficientTail { .. })
        ));
        assert!(matches!(
            fit_exponential_tail(&bounded[..10], 0.5),
            Err(TruncationError::TooFewSamples(10))
        ));
    }

    #[test]
    fn l2_control_iid_and_uncentered() {
        let iid = build_iid_system(Density::piecewise_constant(vec![1.0, 2.0, 1.0]).unwrap());
        let op = ulam_discretize(&iid, 6).unwrap();
        let tau = vec![0.0, 0.0, 0.0, 0.0, 1.0, 3.0];
        let c = l2_tail_control(&op, &tau, 40, true).unwrap();
        assert!(c.partial_sums.iter().all(|s| s.abs() < 1e-15));
        assert!(c.bounded);
        let u = l2_tail_control(&op, &tau, 400, false).unwrap();
        let mean = op.mean(&tau);
        let want = mean * (1..=400).map(|k| 1.0 / (k as f64).sqrt()).sum::<f64>();
        assert!((u.partial_sums[399] - want).abs() < 1e-10);
        assert!(!u.bounded);
        assert!(l2_tail_control(&op, &[1.0], 4, false).is_err());
    }

    fn chain5() -> (MarkovSystem, UlamOperator) {
        let rows = vec![
            vec![0.1, 0.2, 0.3, 0.2, 0.2],
            vec![0.5, 0.1, 0.1, 0.1, 0.2],
            vec![0.0, 0.3, 0.3, 0.4, 0.0],
            vec![0.25, 0.25, 0.0, 0.25, 0.25],
            vec![0.6, 0.0, 0.2, 0.0, 0.2],
        ];
        let sys = build_finite_chain(&rows, None).unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        (sys, op)
    }

    #[test]
    fn telescoping_on_five_states() {
        let (sys, op) = chain5();
        let phi = op.center(&[1.0, -2.0, 0.5, 3.0, 0.0]);
        let psi = solve_poisson_direct(&op, &phi).unwrap();
        for seed in 0..5 {
            let path = crate::systems::simulate_path(&sys, 50, seed);
            let mp = martingale_path(&path, &psi, &op, &phi).unwrap();
            assert_eq!(mp.increments.len(), 49);
            assert!(mp.telescoping_residual() < 1e-9);
        }
        assert!(martingale_property_check(&op, &psi).unwrap() <= 1e-12);
        let series = solve_poisson(&op, &phi, 1e-14).unwrap();
        assert!(martingale_property_check(&op, &series).unwrap() <= 1e-12);
    }

    #[test]
    fn absorbing_state_gives_zero_increments() {
        let sys = build_finite_chain(
            &[vec![1.0, 0.0], vec![0.5, 0.5]],
            Some(&[1.0, 0.0]),
        )
        .unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        let phi = vec![0.0, 1.0];
        let psi = solve_poisson(&op, &phi, 1e-14).unwrap();
        let path = vec![State::Index(0); 10];
        let mp = martingale_path(&path, &psi, &op, &phi).unwrap();
        assert!(mp.increments.iter().all(|x| *x == 0.0));
        assert_eq!(mp.direct_sum, 0.0);
    }

    #[test]
    fn iid_reduces_to_values() {
        let row = vec![0.2, 0.3, 0.5];
        let sys = build_finite_chain(&[row.clone(), row.clone(), row], None).unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        let phi = op.center(&[1.0, 0.0, -1.0]);
        let psi = solve_poisson(&op, &phi, 1e-14).unwrap();
        let path = crate::systems::simulate_path(&sys, 20, 1);
        let mp = martingale_path(&path, &psi, &op, &phi).unwrap();
        for (x, s) in mp.increments.iter().zip(&path[1..]) {
            assert!((x - phi[s.index().unwrap()]).abs() < 1e-15);
        }
        let bad = PoissonSolution {
            psi: vec![0.0],
            ..psi
        };
        assert!(matches!(
            martingale_path(&path, &bad, &op, &phi),
            Err(TruncationError::UnsolvedPoisson(_))
        ));
    }

    #[test]
    fn zero_psi_has_zero_conditional_mean() {
        let (_, op) = chain5();
        let psi = solve_poisson(&op, &[0.0; 5], 1e-12).unwrap();
        assert_eq!(martingale_property_check(&op, &psi).unwrap(), 0.0);
    }

    #[test]
    fn equal_mass_bins_cover_cells() {
        let bins = equal_mass_bins(&[0.25; 8], 4);
        assert_eq!(bins, vec![(0, 2), (2, 4), (4, 6), (6, 8)]);
        let bins = equal_mass_bins(&[0.1, 0.1, 0.6, 0.1, 0.1], 3);
        assert_eq!(bins.first().unwrap().0, 0);
        assert_eq!(bins.last().unwrap().1, 5);
        assert_eq!(bins.len(), 3);
        for w in bins.windows(2) {
            assert_eq!(w[0].1, w[1].0);
            assert!(w[0].0 < w[0].1);
        }
        assert_eq!(equal_mass_bins(&[1.0, 1.0], 5).len(), 2);
    }

    #[test]
    fn empirical_check_on_tent() {
        let tent = build_tent_system();
        let op = ulam_discretize(&tent, 64).unwrap();
        let phi = Observable::log_distance(0.0)
            .truncated(4.0, TruncationPart::Bounded)
            .cell_averages(&tent, 64)
            .unwrap();
        let phi = op.center(&phi);
        let psi = solve_poisson(&op, &phi, 1e-12).unwrap();
        let check = empirical_martingale_check(&tent, &op, &psi, 100_000, 16, 9, 5.0).unwrap();
        assert_eq!(check.bins.len(), 16);
        assert_eq!(check.bins.iter().map(|b| b.count).sum::<usize>(), 100_000);
        assert!(check.passed, "{}", check.max_z_score);
    }
}
