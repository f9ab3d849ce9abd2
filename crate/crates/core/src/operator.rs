//! Discretized Markov operators.
//!
//! An [`UlamOperator`] is a row-stochastic matrix `P` acting on vectors
//! indexed by states (finite chains) or by the cells of a uniform partition
//! of `[0,1]` (interval maps). It is stored in Koopman form,
//! `(Qφ)_i = Σ_j P_ij φ_j`; the transfer operator is its transpose against
//! the stationary weights.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::systems::{compensated_sum, Kernel, MarkovSystem, StochasticMatrix};

/// Weighted mean below which a vector counts as centred.
pub const CENTERED_TOLERANCE: f64 = 1e-10;
/// Iteration cap of the Poisson series.
pub const POISSON_MAX_ITERATIONS: usize = 100_000;
/// Rates at or below this are excluded from the exponential fit.
pub const RATE_FLOOR: f64 = 1e-10;

const WEIGHT_ITERATIONS: usize = 100_000;
const WEIGHT_RESIDUAL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("Ulam discretization needs a piecewise-affine interval map")]
    UnsupportedKernel,
    #[error("need at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("vector has length {got}, operator dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observable is not centred: stationary mean {mean:e}")]
    NotCentered { mean: f64 },
    #[error("‖Qⁿφ‖∞ = {last_norm:e} still above tolerance after {iterations} iterations")]
    NoDecay { iterations: usize, last_norm: f64 },
    #[error("no test vectors supplied")]
    EmptyTestSet,
    #[error("linear solve failed: I − Q is singular on the centred subspace")]
    Singular,
    #[error("tolerance must be positive")]
    InvalidTolerance,
}

pub type Result<T> = std::result::Result<T, OperatorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjoint {
    /// `Qφ(x) = ∫ φ dK_x`: averages over one step forward.
    Koopman,
    /// Pushes densities forward.
    Transfer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    /// Cell boundaries `0 = b₀ < … < b_n = 1`; `None` for finite chains.
    partition: Option<Vec<f64>>,
    n: usize,
    matrix: Vec<f64>,
    weights: Vec<f64>,
    adjoint: Adjoint,
}

impl UlamOperator {
    /// Operator of a finite chain: its own transition matrix.
    pub fn from_finite(system: &MarkovSystem) -> Option<Self> {
        let m = system.matrix()?;
        Some(Self::from_matrix(m, system.stationary_vector()?.to_vec()))
    }

    pub fn from_matrix(m: &StochasticMatrix, weights: Vec<f64>) -> Self {
        let n = m.dim();
        UlamOperator {
            partition: None,
            n,
            matrix: (0..n).flat_map(|i| m.row(i).to_vec()).collect(),
            weights,
            adjoint: Adjoint::Koopman,
        }
    }

    /// Finite chain operator, or the Ulam discretization of an interval map.
    pub fn for_system(system: &MarkovSystem, n_cells: usize) -> Result<Self> {
        match Self::from_finite(system) {
            Some(op) => Ok(op),
            None => ulam_discretize(system, n_cells),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> Adjoint {
        self.adjoint
    }

    pub fn partition(&self) -> Option<&[f64]> {
        self.partition.as_deref()
    }

    /// Stationary weights of the discretized chain.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// `‖wP − w‖₁` for the stored weights.
    pub fn stationarity_residual(&self) -> f64 {
        stationarity_residual(&self.matrix, self.n, &self.weights)
    }

    /// Cell containing `x`; the right endpoint belongs to the last cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        self.partition.as_ref()?;
        Some(((x * self.n as f64).floor() as usize).min(self.n - 1))
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.n {
            Ok(())
        } else {
            Err(OperatorError::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            })
        }
    }

    fn apply_unchecked(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(p, x)| p * x).sum())
            .collect()
    }

    /// One application `Qφ`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(self.apply_unchecked(v))
    }

    /// `Qⁿφ` by repeated matrix–vector products.
    pub fn apply_power(&self, v: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = v.to_vec();
        for _ in 0..n {
            out = self.apply_unchecked(&out);
        }
        Ok(out)
    }

    /// `∫ φ dμ̂` against the stationary weights.
    pub fn mean(&self, v: &[f64]) -> f64 {
        compensated_sum(self.weights.iter().zip(v).map(|(w, x)| w * x))
    }

    pub fn center(&self, v: &[f64]) -> Vec<f64> {
        let m = self.mean(v);
        v.iter().map(|x| x - m).collect()
    }

    /// `‖φ‖_{L²(μ̂)}`.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .map(|(w, x)| w * x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Transfer matrix `L_ij = w_j P_ji / w_i` (zero rows where `w_i = 0`).
    pub fn transfer(&self) -> UlamOperator {
        let mut t = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let wi = self.weights[i];
            if wi <= 0.0 {
                continue;
            }
            for j in 0..self.n {
                t[i * self.n + j] = self.weights[j] * self.get(j, i) / wi;
            }
        }
        UlamOperator {
            partition: self.partition.clone(),
            n: self.n,
            matrix: t,
            weights: self.weights.clone(),
            adjoint: match self.adjoint {
                Adjoint::Koopman => Adjoint::Transfer,
                Adjoint::Transfer => Adjoint::Koopman,
            },
        }
    }

    /// Row-major CSV, one row per line, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn stationarity_residual(matrix: &[f64], n: usize, w: &[f64]) -> f64 {
    let mut next = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            next[j] += w[i] * matrix[i * n + j];
        }
    }
    next.iter().zip(w).map(|(a, b)| (a - b).abs()).sum()
}

/// Ulam matrix of a piecewise-affine map on `n_cells` uniform cells.
///
/// Entry `(i, j)` is `Leb(A_i ∩ T⁻¹A_j) / Leb(A_i)`, computed from the exact
/// preimages of each affine branch. Cells straddling a breakpoint are split
/// between the branches, so no quadrature is involved. The stationary
/// weights start from the cell masses of the system's density and are
/// refined by lazy power iteration on the matrix.
pub fn ulam_discretize(system: &MarkovSystem, n_cells: usize) -> Result<UlamOperator> {
    let map = match system.kernel() {
        Kernel::Map(m) => Some(m),
        Kernel::Iid => None,
        Kernel::Stochastic(_) => return Err(OperatorError::UnsupportedKernel),
    };
    if n_cells < 2 {
        return Err(OperatorError::TooFewCells(n_cells));
    }
    let n = n_cells;
    let h = 1.0 / n as f64;
    let edge = |k: usize| if k == n { 1.0 } else { k as f64 * h };
    let cell_index = |y: f64| ((y * n as f64).floor() as usize).min(n - 1);
    let density = system.density().expect("interval systems carry a density");

    let mut matrix = vec![0.0; n * n];
    let Some(map) = map else {
        // i.i.d. draws: every row is the vector of cell masses
        let masses: Vec<f64> = (0..n).map(|j| density.mass(edge(j), edge(j + 1))).collect();
        for i in 0..n {
            matrix[i * n..(i + 1) * n].copy_from_slice(&masses);
        }
        return Ok(UlamOperator {
            partition: Some((0..=n).map(edge).collect()),
            n,
            matrix,
            weights: masses,
            adjoint: Adjoint::Koopman,
        });
    };
    for i in 0..n {
        let (a, b) = (edge(i), edge(i + 1));
        let row = &mut matrix[i * n..(i + 1) * n];
        for br in map.branches() {
            let (lo, hi) = (a.max(br.start), b.min(br.end));
            if hi <= lo {
                continue;
            }
            if br.slope == 0.0 {
                row[cell_index(br.intercept.clamp(0.0, 1.0))] += hi - lo;
                continue;
            }
            let (y0, y1) = br.image(lo, hi);
            let (y0, y1) = (y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
            let s = br.slope.abs();
            for (j, r) in row.iter_mut().enumerate().take(cell_index(y1) + 1).skip(cell_index(y0)) {
                let overlap = y1.min(edge(j + 1)) - y0.max(edge(j));
                if overlap > 0.0 {
                    *r += overlap / s;
                }
            }
        }
        let len = b - a;
        for r in row.iter_mut() {
            *r /= len;
        }
    }

    let mut weights: Vec<f64> = (0..n).map(|i| density.mass(edge(i), edge(i + 1))).collect();
    for _ in 0..WEIGHT_ITERATIONS {
        if stationarity_residual(&matrix, n, &weights) <= WEIGHT_RESIDUAL {
            break;
        }
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += weights[i] * matrix[i * n + j];
            }
        }
        for (w, x) in weights.iter_mut().zip(next) {
            *w = 0.5 * (*w + x);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    Ok(UlamOperator {
        partition: Some((0..=n).map(edge).collect()),
        n,
        matrix,
        weights,
        adjoint: Adjoint::Koopman,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub psi: Vec<f64>,
    /// `Qψ`, evaluated once at solve time.
    pub q_psi: Vec<f64>,
    /// Number of series terms summed beyond `φ` (0 for a direct solve).
    pub tail_cutoff: usize,
    /// `‖φ − (ψ − Qψ)‖∞`.
    pub residual: f64,
    pub tolerance: f64,
}

impl PoissonSolution {
    pub fn sup_psi(&self) -> f64 {
        self.psi.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn finish(op: &UlamOperator, phi: &[f64], psi: Vec<f64>, tail_cutoff: usize, tol: f64) -> Self {
        let q_psi = op.apply_unchecked(&psi);
        let residual = phi
            .iter()
            .zip(psi.iter().zip(&q_psi))
            .map(|(f, (p, q))| (f - (p - q)).abs())
            .fold(0.0, f64::max);
        PoissonSolution {
            psi,
            q_psi,
            tail_cutoff,
            residual,
            tolerance: tol,
        }
    }
}

fn require_centered(op: &UlamOperator, phi: &[f64]) -> Result<()> {
    op.check_dim(phi)?;
    let mean = op.mean(phi);
    if mean.abs() > CENTERED_TOLERANCE {
        return Err(OperatorError::NotCentered { mean });
    }
    Ok(())
}

/// `ψ = Σ_{i≥0} Qⁱφ`, the solution of `φ = ψ − Qψ` with zero mean.
///
/// Terms are added until `‖Q^N φ‖∞ ≤ tol·(1 − ρ̂)`, where `ρ̂` is the largest
/// one-step contraction ratio seen over the last ten terms. The remainder
/// after the cut is then at most `tol`, and the residual `φ − (ψ − Qψ)`
/// equals `−Q^{N+1}φ`.
pub fn solve_poisson(op: &UlamOperator, phi_centered: &[f64], tol: f64) -> Result<PoissonSolution> {
    if !(tol > 0.0) {
        return Err(OperatorError::InvalidTolerance);
    }
    require_centered(op, phi_centered)?;
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut psi = phi_centered.to_vec();
    let mut term = phi_centered.to_vec();
    let mut norm = sup(&term);
    let mut ratios: Vec<f64> = Vec::new();
    let mut cutoff = 0;
    while norm > 0.0 {
        let rho = ratios.iter().rev().take(10).cloned().fold(0.0, f64::max);
        if !ratios.is_empty() && rho < 1.0 && norm <= tol * (1.0 - rho) {
            break;
        }
        if cutoff >= POISSON_MAX_ITERATIONS {
            return Err(OperatorError::NoDecay {
                iterations: cutoff,
                last_norm: norm,
            });
        }
        term = op.apply_unchecked(&term);
        // project back onto the centred subspace to stop round-off drift
        let m = op.mean(&term);
        term.iter_mut().for_each(|x| *x -= m);
        let next = sup(&term);
        ratios.push(next / norm);
        norm = next;
        cutoff += 1;
        for (p, t) in psi.iter_mut().zip(&term) {
            *p += t;
        }
    }
    Ok(PoissonSolution::finish(op, phi_centered, psi, cutoff, tol))
}

/// Direct solve of `(I − P + 𝟙wᵀ)ψ = φ`, whose solution is the zero-mean
/// solution of `(I − P)ψ = φ` for centred `φ`.
pub fn solve_poisson_direct(op: &UlamOperator, phi_centered: &[f64]) -> Result<PoissonSolution> {
    require_centered(op, phi_centered)?;
    let n = op.n;
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - op.get(i, j) + op.weights[j]
    });
    let b = DVector::from_column_slice(phi_centered);
    let psi = a.lu().solve(&b).ok_or(OperatorError::Singular)?;
    Ok(PoissonSolution::finish(
        op,
        phi_centered,
        psi.iter().copied().collect(),
        0,
        f64::EPSILON,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    /// Prefactor `C_L`.
    pub c: f64,
    /// Rate `θ` in `r_n ≈ C_L e^{−θn}`.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingProfile {
    /// `rates[k]` estimates `r_{k+1}`.
    pub rates: Vec<f64>,
    /// `None` when fewer than two rates exceed [`RATE_FLOOR`].
    pub exponential_fit: Option<ExponentialFit>,
    /// Max absolute residual of the log-linear fit.
    pub fit_residual: f64,
}

/// Sup-norm mixing rates `r_n = max_φ ‖Qⁿφ‖∞ / ‖φ‖∞` over centred test
/// vectors, with a least-squares fit of `log r_n` against `n`.
pub fn mixing_profile(op: &UlamOperator, test_vectors: &[Vec<f64>], n_max: usize) -> Result<MixingProfile> {
    let tests: Vec<&Vec<f64>> = test_vectors
        .iter()
        .filter(|v| v.iter().any(|x| *x != 0.0))
        .collect();
    if tests.is_empty() {
        return Err(OperatorError::EmptyTestSet);
    }
    for v in &tests {
        require_centered(op, v)?;
    }
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rates = vec![0.0f64; n_max];
    for v in tests {
        let base = sup(v);
        let mut cur = v.clone();
        for r in rates.iter_mut() {
            cur = op.apply_unchecked(&cur);
            *r = r.max(sup(&cur) / base);
        }
    }

    let points: Vec<(f64, f64)> = rates
        .iter()
        .enumerate()
        .take_while(|(_, r)| **r > RATE_FLOOR)
        .map(|(k, r)| ((k + 1) as f64, r.ln()))
        .collect();
    let (exponential_fit, fit_residual) = if points.len() >= 2 {
        let m = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
        let my = points.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let resid = points
            .iter()
            .map(|(x, y)| (y - (intercept + slope * x)).abs())
            .fold(0.0, f64::max);
        (
            Some(ExponentialFit {
                c: intercept.exp(),
                theta: -slope,
            }),
            resid,
        )
    } else {
        (None, 0.0)
    };
    Ok(MixingProfile {
        rates,
        exponential_fit,
        fit_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{
        build_doubling_system, build_finite_chain, build_map_system, build_tent_system, Branch,
        Density, PiecewiseAffineMap,
    };

    fn two_state() -> UlamOperator {
        let sys = build_finite_chain(&[vec![0.7, 0.3], vec![0.1, 0.9]], None).unwrap();
        UlamOperator::from_finite(&sys).unwrap()
    }

    fn iid3() -> UlamOperator {
        let row = vec![0.2, 0.3, 0.5];
        let sys = build_finite_chain(&[row.clone(), row.clone(), row], None).unwrap();
        UlamOperator::from_finite(&sys).unwrap()
    }

    #[test]
    fn tent_four_cells() {
        let op = ulam_discretize(&build_tent_system(), 4).unwrap();
        let expected = [
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.0, 0.5, 0.5],
            [0.0, 0.0, 0.5, 0.5],
            [0.5, 0.5, 0.0, 0.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(op.row(i), row);
        }
        assert_eq!(op.weights(), &[0.25; 4]);
    }

    #[test]
    fn doubling_four_cells() {
        let op = ulam_discretize(&build_doubling_system(), 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if j == (2 * i) % 4 || j == (2 * i + 1) % 4 { 0.5 } else { 0.0 };
                assert_eq!(op.get(i, j), want);
            }
        }
    }

    #[test]
    fn identity_map_gives_identity() {
        let id = PiecewiseAffineMap::new(vec![Branch::new(0.0, 1.0, 1.0, 0.0)]).unwrap();
        let op = ulam_discretize(&build_map_system(id, Density::uniform()), 7).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(op.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn unsupported_and_small() {
        let chain = build_finite_chain(&[vec![1.0]], None).unwrap();
        assert_eq!(ulam_discretize(&chain, 4), Err(OperatorError::UnsupportedKernel));
        assert_eq!(ulam_discretize(&build_tent_system(), 1), Err(OperatorError::TooFewCells(1)));
    }

    #[test]
    fn breakpoint_inside_cell() {
        // breakpoint at 0.5 falls inside the middle cell of a 3-cell partition
        let op = ulam_discretize(&build_tent_system(), 3).unwrap();
        for s in op.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        for s in op.column_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(op.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn power_zero_and_iid() {
        let op = iid3();
        let phi = op.center(&[1.0, -2.0, 4.0]);
        assert_eq!(op.apply_power(&phi, 0).unwrap(), phi);
        for x in op.apply_power(&phi, 1).unwrap() {
            assert!(x.abs() < 1e-15);
        }
        assert!(matches!(
            op.apply(&[1.0]),
            Err(OperatorError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn two_state_contraction() {
        let op = two_state();
        let phi = op.center(&[1.0, -1.0]);
        let mut prev = phi.clone();
        for n in 1..20 {
            let cur = op.apply_power(&phi, n).unwrap();
            for (c, p) in cur.iter().zip(&prev) {
                assert!((c - 0.6 * p).abs() < 1e-14);
            }
            prev = cur;
        }
    }

    #[test]
    fn poisson_iid_is_phi() {
        let op = iid3();
        let phi = op.center(&[1.0, -2.0, 4.0]);
        let sol = solve_poisson(&op, &phi, 1e-12).unwrap();
        for (p, f) in sol.psi.iter().zip(&phi) {
            assert!((p - f).abs() < 1e-15);
        }
        assert!(sol.residual < 1e-15);
    }

    #[test]
    fn poisson_two_state_matches_closed_form() {
        // On the centred subspace of a 2-state chain Q acts as 0.6·I, so
        // ψ = φ/(1 − 0.6).
        let op = two_state();
        let phi = op.center(&[1.0, -1.0]);
        let sol = solve_poisson(&op, &phi, 1e-13).unwrap();
        assert!(sol.residual <= 1e-13);
        for (p, f) in sol.psi.iter().zip(&phi) {
            assert!((p - f / 0.4).abs() < 1e-12);
        }
        let direct = solve_poisson_direct(&op, &phi).unwrap();
        for (p, q) in sol.psi.iter().zip(&direct.psi) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_zero_and_errors() {
        let op = two_state();
        let sol = solve_poisson(&op, &[0.0, 0.0], 1e-12).unwrap();
        assert_eq!(sol.psi, vec![0.0, 0.0]);
        assert!(matches!(
            solve_poisson(&op, &[1.0, 1.0], 1e-12),
            Err(OperatorError::NotCentered { .. })
        ));
        let flip = build_finite_chain(&[vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        let flip = UlamOperator::from_finite(&flip).unwrap();
        assert!(matches!(
            solve_poisson(&flip, &[1.0, -1.0], 1e-12),
            Err(OperatorError::NoDecay { .. })
        ));
    }

    #[test]
    fn mixing_rates() {
        let op = two_state();
        let prof = mixing_profile(&op, &[op.center(&[1.0, -1.0])], 80).unwrap();
        let fit = prof.exponential_fit.unwrap();
        assert!((fit.theta - (-(0.6f64).ln())).abs() < 0.02 * 0.5108);
        let iid = iid3();
        let prof = mixing_profile(&iid, &[iid.center(&[1.0, 0.0, 0.0])], 5).unwrap();
        assert!(prof.rates.iter().all(|r| *r < 1e-15));
        assert!(prof.exponential_fit.is_none());
        assert_eq!(mixing_profile(&iid, &[], 5), Err(OperatorError::EmptyTestSet));
    }

    #[test]
    fn transfer_is_weighted_transpose() {
        let op = two_state();
        let t = op.transfer();
        assert_eq!(t.adjoint(), Adjoint::Transfer);
        for s in t.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let tent = ulam_discretize(&build_tent_system(), 8).unwrap();
        let tt = tent.transfer();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(tt.get(i, j), tent.get(j, i));
            }
        }
    }

    #[test]
    fn csv_round_trips() {
        let op = ulam_discretize(&build_tent_system(), 4).unwrap();
        assert_eq!(op.to_csv().lines().next().unwrap(), "0.5,0.5,0,0");
        let op = two_state();
        let parsed: Vec<Vec<f64>> = op
            .to_csv()
            .lines()
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        assert_eq!(parsed[1], op.row(1));
    }
}
