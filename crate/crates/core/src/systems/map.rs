use serde::{Deserialize, Serialize};

use super::{Result, SystemError};

const COVER_TOLERANCE: f64 = 1e-12;

/// One affine branch `x ↦ slope·x + intercept` on `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub start: f64,
    pub end: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl Branch {
    pub fn new(start: f64, end: f64, slope: f64, intercept: f64) -> Self {
        Branch {
            start,
            end,
            slope,
            intercept,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Image of `[lo, hi] ⊆ [start, end]` as an ordered interval.
    pub fn image(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b) = (self.apply(lo), self.apply(hi));
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// A piecewise-affine self-map of `[0,1]`.
///
/// Branches are ordered, contiguous and cover `[0,1]`. At a shared
/// breakpoint the left branch is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffineMap {
    branches: Vec<Branch>,
}

impl PiecewiseAffineMap {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(SystemError::InvalidMap("no branches".into()));
        }
        if branches[0].start != 0.0 {
            return Err(SystemError::InvalidMap("first branch must start at 0".into()));
        }
        if branches[branches.len() - 1].end != 1.0 {
            return Err(SystemError::InvalidMap("last branch must end at 1".into()));
        }
        for (k, b) in branches.iter().enumerate() {
            if !(b.start < b.end) || !b.slope.is_finite() || !b.intercept.is_finite() {
                return Err(SystemError::InvalidMap(format!("branch {k} is degenerate")));
            }
            if k > 0 && branches[k - 1].end != b.start {
                return Err(SystemError::InvalidMap(format!(
                    "branch {k} starts at {} but branch {} ends at {}",
                    b.start,
                    k - 1,
                    branches[k - 1].end
                )));
            }
            let (lo, hi) = b.image(b.start, b.end);
            if lo < -COVER_TOLERANCE || hi > 1.0 + COVER_TOLERANCE {
                return Err(SystemError::InvalidMap(format!(
                    "branch {k} maps outside [0,1]: [{lo}, {hi}]"
                )));
            }
        }
        Ok(PiecewiseAffineMap { branches })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.branches.iter().map(|b| b.start).collect();
        pts.push(1.0);
        pts
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self
            .branches
            .partition_point(|b| b.end < x)
            .min(self.branches.len() - 1);
        self.branches[idx].apply(x).clamp(0.0, 1.0)
    }

    /// Orientation flags when the map is a full two-branch map of slope ±2
    /// on `[0,1/2]` and `[1/2,1]` (doubling, tent and their mirror images).
    ///
    /// For such maps a Lebesgue-distributed point has i.i.d. fair binary
    /// digits and the orbit is a shift on those digits, complemented after
    /// each orientation-reversing branch. `Some([r0, r1])` gives whether each
    /// branch reverses orientation.
    pub fn binary_shift_orientation(&self) -> Option<[bool; 2]> {
        if self.branches.len() != 2 {
            return None;
        }
        let mut flags = [false; 2];
        for (k, b) in self.branches.iter().enumerate() {
            let (lo, hi) = (k as f64 * 0.5, (k + 1) as f64 * 0.5);
            if b.start != lo || b.end != hi || b.slope.abs() != 2.0 {
                return None;
            }
            let (a, c) = b.image(lo, hi);
            if a != 0.0 || c != 1.0 {
                return None;
            }
            flags[k] = b.slope < 0.0;
        }
        Some(flags)
    }
}
