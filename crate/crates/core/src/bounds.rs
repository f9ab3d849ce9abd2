//! Closed-form deviation bounds.
//!
//! Every bound returns a [`BoundResult`] carrying the uncapped formula value,
//! its cap at one, the sample size from which the bound is claimed, and the
//! named constants that went into it.
//!
//! | family            | bound on `P(|S_n/n − ∫φ| > ε)`                 | from `n ≥`            |
//! |-------------------|------------------------------------------------|-----------------------|
//! | Azuma–Hoeffding   | `exp(−nε²/2C²)` (one-sided, `|Xᵢ| ≤ C`)        | 1                     |
//! | bounded           | `2 exp(−nε²/8(‖φ‖∞ + 2‖ψ‖∞)²)`                 | `⌈4‖ψ‖∞/ε⌉`           |
//! | unbounded         | `2 exp(−c(α) ε^{2/3} n^{1/3})` (one-sided)      | `⌈16 C ‖φ²‖₂/ε⌉`      |
//! | tent map          | `4 exp(−ε^{4/3} n^{1/3}/24)`                   | `⌈512/ε³⌉`            |
//! | expanding map     | `exp(−c ε n^{1/3})`, `ε ≤ 1`                   | 1                     |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("exponent p must be at least 2, got {0}")]
    InvalidExponent(f64),
    #[error("eps = {0} outside (0, 1]")]
    EpsOutOfRange(f64),
    #[error("expected {expected} conditional norms, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub n: u64,
    pub eps: f64,
    /// `min(1, raw_value)`.
    pub value: f64,
    pub raw_value: f64,
    /// Whether `n ≥ threshold`.
    pub valid: bool,
    pub threshold: u64,
    pub metadata: BTreeMap<String, f64>,
}

impl BoundResult {
    fn new(n: u64, eps: f64, raw_value: f64, threshold: u64) -> Self {
        BoundResult {
            n,
            eps,
            value: raw_value.min(1.0),
            raw_value,
            valid: n >= threshold,
            threshold,
            metadata: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).copied()
    }

    pub fn is_vacuous(&self) -> bool {
        self.value >= 1.0
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(BoundError::NonPositiveParameter { name, value })
    }
}

fn ceil_threshold(x: f64) -> u64 {
    // guard against 16/0.5 landing a hair above 32
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r.max(1.0) as u64
    } else {
        x.ceil().max(1.0) as u64
    }
}

/// `exp(−nε²/(2C²))` for martingale differences bounded by `C`.
pub fn azuma_hoeffding(n: u64, eps: f64, c: f64) -> Result<BoundResult> {
    azuma_hoeffding_scaled(n, eps, c, 1.0)
}

fn azuma_hoeffding_scaled(n: u64, eps: f64, c: f64, rate: f64) -> Result<BoundResult> {
    positive("eps", eps)?;
    positive("C", c)?;
    let exponent = rate * n as f64 * eps * eps / (2.0 * c * c);
    Ok(BoundResult::new(n, eps, (-exponent).exp(), 1).with("C", c))
}

/// Bound for bounded observables with a bounded Poisson solution.
///
/// The exponent is `ε²n/8(‖φ‖∞ + 2‖ψ‖∞)²`. The threshold is `⌈4‖ψ‖∞/ε⌉`,
/// the smallest `n` at which the boundary term `2‖ψ‖∞/n` is at most `ε/2`;
/// the reciprocal form `4/(ε‖ψ‖∞)` is kept in the metadata as
/// `reciprocal_threshold`.
pub fn bounded_ldt(n: u64, eps: f64, sup_phi: f64, sup_psi: f64) -> Result<BoundResult> {
    bounded_ldt_scaled(n, eps, sup_phi, sup_psi, 1.0)
}

fn bounded_ldt_scaled(n: u64, eps: f64, sup_phi: f64, sup_psi: f64, rate: f64) -> Result<BoundResult> {
    positive("eps", eps)?;
    positive("sup_psi", sup_psi)?;
    if !(sup_phi >= 0.0) {
        return Err(BoundError::NonPositiveParameter {
            name: "sup_phi",
            value: sup_phi,
        });
    }
    let big_c = sup_phi + 2.0 * sup_psi;
    let c_eps = eps * eps / (8.0 * big_c * big_c);
    let raw = 2.0 * (-rate * c_eps * n as f64).exp();
    Ok(BoundResult::new(n, eps, raw, ceil_threshold(4.0 * sup_psi / eps))
        .with("c_eps", c_eps * rate)
        .with("sup_phi", sup_phi)
        .with("sup_psi", sup_psi)
        .with("reciprocal_threshold", 4.0 / (eps * sup_psi)))
}

/// Right-hand side of the maximal `L^p` inequality for stationary sequences,
/// `C_p √n (‖X₁‖_p + 240 Σ_{k=1}^n k^{−1/2} ‖E[X_k | F₀]‖_p)`.
///
/// `cond_norms[k-1]` holds `‖E[X_k | F₀]‖_p`; for a Markov chain this is
/// `‖Q^k φ‖`. `C_p` defaults to `p^p`.
pub fn burkholder_rhs(p: f64, n: usize, norm_x1_p: f64, cond_norms: &[f64], c_p: Option<f64>) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(BoundError::InvalidExponent(p));
    }
    if cond_norms.len() != n {
        return Err(BoundError::LengthMismatch {
            expected: n,
            got: cond_norms.len(),
        });
    }
    let c_p = match c_p {
        Some(c) => positive("C_p", c)?,
        None => p.powf(p),
    };
    let tail: f64 = cond_norms
        .iter()
        .enumerate()
        .map(|(k, c)| c / ((k + 1) as f64).sqrt())
        .sum();
    Ok(c_p * (n as f64).sqrt() * (norm_x1_p + 240.0 * tail))
}

/// Truncation level `M(ε, n) = ε^{2/3} n^{1/3} / 4^{1/3}` balancing the
/// bounded and tail contributions.
pub fn truncation_level(eps: f64, n: u64) -> f64 {
    (eps * eps * n as f64 / 4.0).cbrt()
}

/// `c(α) = min(4^{2/3}/8, α/(2·4^{1/3})) = 2^{−5/3} min(1, α)`.
///
/// Substituting `M(ε, n)` turns the two exponents `nε²/8M²` and `αM/2` into
/// `2^{−5/3} ε^{2/3} n^{1/3}` and `α 2^{−5/3} ε^{2/3} n^{1/3}`; the smaller
/// coefficient is the common decay rate.
pub fn balancing_constant(alpha: f64) -> f64 {
    let bounded = 4f64.powf(2.0 / 3.0) / 8.0;
    let tail = alpha / (2.0 * 4f64.cbrt());
    bounded.min(tail)
}

/// One-sided bound `2 exp(−c(α) ε^{2/3} n^{1/3})` for observables with
/// exponential tails, valid from `n₀ = ⌈16 C ‖φ²‖₂ / ε⌉`.
///
/// Metadata records `M`, the Azuma addend `exp(−nε²/8M²)` (`addend1`) and the
/// Chebyshev addend `16 C ‖φ²‖₂/(nε²) · exp(−αM/2)` (`addend2`).
pub fn unbounded_ldt(n: u64, eps: f64, alpha: f64, c_burk: f64, norm_phi2_l2: f64) -> Result<BoundResult> {
    unbounded_ldt_scaled(n, eps, alpha, c_burk, norm_phi2_l2, 1.0, 2.0)
}

/// Two-sided version of [`unbounded_ldt`]: the union bound over `φ` and
/// `−φ` doubles the prefactor.
pub fn unbounded_ldt_two_sided(n: u64, eps: f64, alpha: f64, c_burk: f64, norm_phi2_l2: f64) -> Result<BoundResult> {
    unbounded_ldt_scaled(n, eps, alpha, c_burk, norm_phi2_l2, 1.0, 4.0)
}

fn unbounded_ldt_scaled(
    n: u64,
    eps: f64,
    alpha: f64,
    c_burk: f64,
    norm_phi2_l2: f64,
    rate: f64,
    prefactor: f64,
) -> Result<BoundResult> {
    positive("eps", eps)?;
    positive("alpha", alpha)?;
    positive("C_burk", c_burk)?;
    positive("norm_phi2_L2", norm_phi2_l2)?;
    let c = balancing_constant(alpha);
    let nf = n as f64;
    let m = truncation_level(eps, n);
    let raw = prefactor * (-rate * c * eps.powf(2.0 / 3.0) * nf.cbrt()).exp();
    let k = 16.0 * c_burk * norm_phi2_l2;
    let addend1 = (-nf * eps * eps / (8.0 * m * m)).exp();
    let addend2 = k / (nf * eps * eps) * (-alpha * m / 2.0).exp();
    Ok(BoundResult::new(n, eps, raw, ceil_threshold(k / eps))
        .with("c", c * rate)
        .with("alpha", alpha)
        .with("M", m)
        .with("addend1", addend1)
        .with("addend2", addend2))
}

/// `4 exp(−ε^{4/3} n^{1/3}/24)` from `n ≥ ⌈512/ε³⌉`, for the tent map with
/// `φ = log x`; the monitored event is `|(1/n) Σ log Tᵏx| > 1 + ε`.
pub fn tent_corollary_bound(n: u64, eps: f64) -> Result<BoundResult> {
    tent_corollary_scaled(n, eps, 1.0)
}

fn tent_corollary_scaled(n: u64, eps: f64, rate: f64) -> Result<BoundResult> {
    positive("eps", eps)?;
    let raw = 4.0 * (-rate * eps.powf(4.0 / 3.0) * (n as f64).cbrt() / 24.0).exp();
    Ok(BoundResult::new(n, eps, raw, ceil_threshold(512.0 / (eps * eps * eps)))
        .with("c", rate / 24.0))
}

/// `exp(−c ε n^{1/3})` for `ε ∈ (0, 1]`.
pub fn expanding_ldt_bound(n: u64, eps: f64, c_eps: f64) -> Result<BoundResult> {
    expanding_ldt_scaled(n, eps, c_eps, 1.0)
}

fn expanding_ldt_scaled(n: u64, eps: f64, c_eps: f64, rate: f64) -> Result<BoundResult> {
    positive("eps", eps)?;
    positive("c_eps", c_eps)?;
    if eps > 1.0 {
        return Err(BoundError::EpsOutOfRange(eps));
    }
    let raw = (-rate * c_eps * eps * (n as f64).cbrt()).exp();
    Ok(BoundResult::new(n, eps, raw, 1).with("c", c_eps * rate))
}

/// A bound family with its constants fixed, evaluable over an `(n, ε)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundFamily {
    AzumaHoeffding {
        c: f64,
    },
    BoundedLdt {
        sup_phi: f64,
        sup_psi: f64,
    },
    UnboundedLdt {
        alpha: f64,
        c_burk: f64,
        norm_phi2_l2: f64,
        #[serde(default)]
        two_sided: bool,
    },
    TentCorollary,
    ExpandingLdt {
        c_eps: f64,
    },
}

impl BoundFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::AzumaHoeffding { .. } => "azuma_hoeffding",
            BoundFamily::BoundedLdt { .. } => "bounded_ldt",
            BoundFamily::UnboundedLdt { .. } => "unbounded_ldt",
            BoundFamily::TentCorollary => "tent_corollary",
            BoundFamily::ExpandingLdt { .. } => "expanding_ldt",
        }
    }

    pub fn evaluate(&self, n: u64, eps: f64) -> Result<BoundResult> {
        self.evaluate_with_rate(n, eps, 1.0)
    }

    /// Evaluates with the decay constant multiplied by `rate`. Values other
    /// than 1 yield deliberately wrong bounds, used as falsification
    /// controls.
    pub fn evaluate_with_rate(&self, n: u64, eps: f64, rate: f64) -> Result<BoundResult> {
        match *self {
            BoundFamily::AzumaHoeffding { c } => azuma_hoeffding_scaled(n, eps, c, rate),
            BoundFamily::BoundedLdt { sup_phi, sup_psi } => {
                bounded_ldt_scaled(n, eps, sup_phi, sup_psi, rate)
            }
            BoundFamily::UnboundedLdt {
                alpha,
                c_burk,
                norm_phi2_l2,
                two_sided,
            } => unbounded_ldt_scaled(
                n,
                eps,
                alpha,
                c_burk,
                norm_phi2_l2,
                rate,
                if two_sided { 4.0 } else { 2.0 },
            ),
            BoundFamily::TentCorollary => tent_corollary_scaled(n, eps, rate),
            BoundFamily::ExpandingLdt { c_eps } => expanding_ldt_scaled(n, eps, c_eps, rate),
        }
    }
}

/// CSV header for bound curves.
pub const BOUND_CSV_HEADER: &str = "family,n,eps,raw_value,value,valid,M,addend1,addend2";

/// One CSV line for a bound; absent metadata stays empty.
pub fn bound_csv_row(family: &str, b: &BoundResult) -> String {
    let opt = |k: &str| b.meta(k).map(|v| format!("{v}")).unwrap_or_default();
    format!(
        "{family},{},{},{},{},{},{},{},{}",
        b.n,
        b.eps,
        b.raw_value,
        b.value,
        b.valid,
        opt("M"),
        opt("addend1"),
        opt("addend2")
    )
}
