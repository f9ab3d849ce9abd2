//! Markov systems: state spaces, kernels, stationary measures, observables
//! and trajectory simulation.
//!
//! A [`MarkovSystem`] bundles a state space, a transition kernel and a
//! stationary measure. Three kernels are supported:
//!
//! * a row-stochastic matrix on a finite state space,
//! * a piecewise-affine map of `[0,1]` (a degenerate kernel `K_x = δ_{T(x)}`),
//! * an i.i.d. sampler drawing every state from a fixed density.
//!
//! Trajectories always start from the stationary measure.

mod map;
mod observable;
mod simulate;

pub use map::{Branch, PiecewiseAffineMap};
pub use observable::{Observable, ObservableKind, Truncation, TruncationPart};
pub use simulate::{
    deviation_indicator, derive_seed, exceeds, sample_observable, simulate_batch, simulate_path,
    State, TrajectoryBatch, TIE_TOLERANCE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums of a stochastic matrix must be within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Residual `‖πP − π‖₁` accepted for a stationary vector.
pub const STATIONARY_TOLERANCE: f64 = 1e-10;
/// Target residual of the stationary power iteration.
pub const POWER_ITERATION_RESIDUAL: f64 = 1e-12;
/// Iteration cap for the stationary power iteration.
pub const POWER_ITERATION_MAX: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("row {row} is not stochastic: sum = {sum}")]
    NonStochastic { row: usize, sum: f64 },
    #[error("negative or non-finite entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("stationary power iteration did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("chain is reducible; the stationary measure is not unique, supply a hint")]
    Reducible,
    #[error("supplied stationary vector is not stationary (residual {residual:e})")]
    NotStationary { residual: f64 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("observable does not match the state space: {0}")]
    IncompatibleObservable(String),
    #[error("trial {trial} hit the singularity on 100 consecutive redraws")]
    SingularityHit { trial: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, SystemError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateSpace {
    UnitInterval,
    Finite { n_states: usize },
}

/// Piecewise-constant probability density on a uniform grid of `[0,1]`.
///
/// `values[i]` is the density on `[i/k, (i+1)/k)`. A single value is the
/// uniform (Lebesgue) density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    values: Vec<f64>,
}

impl Density {
    pub fn uniform() -> Self {
        Density { values: vec![1.0] }
    }

    /// Builds a density from bin heights, normalising so it integrates to one.
    pub fn piecewise_constant(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SystemError::InvalidDensity("no bins".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SystemError::InvalidDensity(
                "bin heights must be finite and nonnegative".into(),
            ));
        }
        let k = values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() / k;
        if mass <= 0.0 {
            return Err(SystemError::InvalidDensity("zero total mass".into()));
        }
        Ok(Density {
            values: values.into_iter().map(|v| v / mass).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn is_uniform(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    /// Sup bound `C_μ` of the density against Lebesgue measure.
    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `∫_a^b f(x) ρ(x) dx` where `lebesgue(c, d)` returns `∫_c^d f`.
    pub(crate) fn integrate<F: Fn(f64, f64) -> f64>(&self, a: f64, b: f64, lebesgue: F) -> f64 {
        let k = self.values.len();
        if k == 1 {
            return self.values[0] * lebesgue(a, b);
        }
        let width = 1.0 / k as f64;
        let first = ((a / width).floor() as usize).min(k - 1);
        let mut total = 0.0;
        for (i, &rho) in self.values.iter().enumerate().skip(first) {
            let lo = (i as f64 * width).max(a);
            let hi = ((i + 1) as f64 * width).min(b);
            if lo >= b {
                break;
            }
            if hi > lo && rho > 0.0 {
                total += rho * lebesgue(lo, hi);
            }
        }
        total
    }

    /// Mass `μ([a,b])`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.integrate(a, b, |c, d| d - c)
    }

    pub(crate) fn cumulative_bins(&self) -> Vec<f64> {
        let k = self.values.len() as f64;
        let mut acc = 0.0;
        let mut cum: Vec<f64> = self
            .values
            .iter()
            .map(|v| {
                acc += v / k;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cum
    }
}

/// Row-major square stochastic matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SystemError::Empty);
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SystemError::NotSquare {
                    row: i,
                    len: row.len(),
                    expected: n,
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(SystemError::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(SystemError::NonStochastic { row: i, sum });
            }
            data.extend_from_slice(row);
        }
        Ok(StochasticMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// `π ↦ πP`.
    pub fn left_apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += p * m;
            }
        }
        out
    }

    /// `‖πP − π‖₁`.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        self.left_apply(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    fn is_irreducible(&self) -> bool {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..self.n {
                    let w = if forward { self.get(i, j) } else { self.get(j, i) };
                    if w > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Stochastic(StochasticMatrix),
    Map(PiecewiseAffineMap),
    /// Every step is an independent draw from the stationary density.
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stationary {
    Vector(Vec<f64>),
    Density(Density),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSystem {
    space: StateSpace,
    kernel: Kernel,
    stationary: Stationary,
}

impl MarkovSystem {
    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn stationary(&self) -> &Stationary {
        &self.stationary
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.space, StateSpace::Finite { .. })
    }

    pub fn matrix(&self) -> Option<&StochasticMatrix> {
        match &self.kernel {
            Kernel::Stochastic(m) => Some(m),
            _ => None,
        }
    }

    pub fn map(&self) -> Option<&PiecewiseAffineMap> {
        match &self.kernel {
            Kernel::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn stationary_vector(&self) -> Option<&[f64]> {
        match &self.stationary {
            Stationary::Vector(v) => Some(v),
            Stationary::Density(_) => None,
        }
    }

    pub fn density(&self) -> Option<&Density> {
        match &self.stationary {
            Stationary::Density(d) => Some(d),
            Stationary::Vector(_) => None,
        }
    }

    /// `C_μ`: sup of the stationary density (interval systems only).
    pub fn c_mu(&self) -> Option<f64> {
        self.density().map(Density::sup)
    }
}

/// The tent map `x ↦ 1 − |1 − 2x|` with Lebesgue measure.
pub fn build_tent_system() -> MarkovSystem {
    let map = PiecewiseAffineMap::new(vec![
        Branch::new(0.0, 0.5, 2.0, 0.0),
        Branch::new(0.5, 1.0, -2.0, 2.0),
    ])
    .expect("tent branches are valid");
    MarkovSystem {
        space: StateSpace::UnitInterval,
        kernel: Kernel::Map(map),
        stationary: Stationary::Density(Density::uniform()),
    }
}

/// The doubling map `x ↦ 2x mod 1` with Lebesgue measure.
pub fn build_doubling_system() -> MarkovSystem {
    let map = PiecewiseAffineMap::new(vec![
        Branch::new(0.0, 0.5, 2.0, 0.0),
        Branch::new(0.5, 1.0, 2.0, -1.0),
    ])
    .expect("doubling branches are valid");
    MarkovSystem {
        space: StateSpace::UnitInterval,
        kernel: Kernel::Map(map),
        stationary: Stationary::Density(Density::uniform()),
    }
}

/// An interval map together with a caller-supplied invariant density.
///
/// Invariance of the density is not verified here; the Ulam operator built
/// from the system reports its own stationarity residual.
pub fn build_map_system(map: PiecewiseAffineMap, density: Density) -> MarkovSystem {
    MarkovSystem {
        space: StateSpace::UnitInterval,
        kernel: Kernel::Map(map),
        stationary: Stationary::Density(density),
    }
}

pub fn build_iid_system(density: Density) -> MarkovSystem {
    MarkovSystem {
        space: StateSpace::UnitInterval,
        kernel: Kernel::Iid,
        stationary: Stationary::Density(density),
    }
}

/// Finite chain from a row-stochastic matrix.
///
/// Without a hint the stationary vector is found by power iteration on the
/// lazy chain `(P + I)/2`, which has the same stationary vector and is
/// aperiodic. Reducible chains are rejected since their stationary measure
/// is not unique.
pub fn build_finite_chain(
    matrix: &[Vec<f64>],
    stationary_hint: Option<&[f64]>,
) -> Result<MarkovSystem> {
    let m = StochasticMatrix::from_rows(matrix)?;
    let n = m.dim();
    let stationary = match stationary_hint {
        Some(hint) => {
            if hint.len() != n {
                return Err(SystemError::InvalidArgument(format!(
                    "stationary hint has {} entries, expected {n}",
                    hint.len()
                )));
            }
            if hint.iter().any(|p| !p.is_finite() || *p < 0.0)
                || (hint.iter().sum::<f64>() - 1.0).abs() > STATIONARY_TOLERANCE
            {
                return Err(SystemError::InvalidArgument(
                    "stationary hint is not a probability vector".into(),
                ));
            }
            let residual = m.stationarity_residual(hint);
            if residual > STATIONARY_TOLERANCE {
                return Err(SystemError::NotStationary { residual });
            }
            hint.to_vec()
        }
        None => {
            if !m.is_irreducible() {
                return Err(SystemError::Reducible);
            }
            stationary_power_iteration(&m)?
        }
    };
    Ok(MarkovSystem {
        space: StateSpace::Finite { n_states: n },
        kernel: Kernel::Stochastic(m),
        stationary: Stationary::Vector(stationary),
    })
}

fn stationary_power_iteration(m: &StochasticMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..POWER_ITERATION_MAX {
        let next = m.left_apply(&pi);
        let residual: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual <= POWER_ITERATION_RESIDUAL {
            return Ok(polish(m, next, residual));
        }
        for (p, q) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + q);
        }
    }
    Err(SystemError::NoConvergence {
        iterations: POWER_ITERATION_MAX,
    })
}

// Keeps iterating while the residual still shrinks, down to rounding level.
fn polish(m: &StochasticMatrix, mut pi: Vec<f64>, mut residual: f64) -> Vec<f64> {
    for _ in 0..10_000 {
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        let next = m.left_apply(&pi);
        let r: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if !(r < residual) && r > 0.0 {
            if r < residual {
                pi = next;
            }
            break;
        }
        residual = r;
        pi = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
        if r == 0.0 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.into_iter().map(|p| p / total).collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline(always)]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        let (big, small) = if self.sum.abs() >= x.abs() {
            (self.sum, x)
        } else {
            (x, self.sum)
        };
        self.compensation += (big - t) + small;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}
