use serde::{Deserialize, Serialize};

use super::{Density, MarkovSystem, Result, StateSpace, Stationary, SystemError};

/// Base function of an observable, before scaling, truncation and centring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObservableKind {
    /// One value per state of a finite chain.
    Tabular(Vec<f64>),
    /// `x ↦ |log |x − z||`, singular at `z`.
    LogDistance { z: f64 },
    Affine { slope: f64, intercept: f64 },
    /// Indicator of `[low, high)`.
    Indicator { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruncationPart {
    /// `φ·𝟙{φ ≤ M}`
    Bounded,
    /// `φ·𝟙{φ > M}`
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub level: f64,
    pub part: TruncationPart,
}

/// A real observable on the state space of a [`MarkovSystem`].
///
/// The value at `x` is `trunc(scale·base(x) + shift) − offset`, where
/// `trunc` is the identity unless a truncation part is selected. Centring
/// sets `offset` to the stationary mean of the truncated function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    kind: ObservableKind,
    scale: f64,
    shift: f64,
    truncation: Option<Truncation>,
    offset: f64,
    centered: bool,
}

impl Observable {
    fn from_kind(kind: ObservableKind) -> Self {
        Observable {
            kind,
            scale: 1.0,
            shift: 0.0,
            truncation: None,
            offset: 0.0,
            centered: false,
        }
    }

    pub fn tabular(values: Vec<f64>) -> Self {
        Self::from_kind(ObservableKind::Tabular(values))
    }

    pub fn log_distance(z: f64) -> Self {
        Self::from_kind(ObservableKind::LogDistance { z })
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self::from_kind(ObservableKind::Affine { slope, intercept })
    }

    pub fn constant(c: f64) -> Self {
        Self::affine(0.0, c)
    }

    pub fn indicator(low: f64, high: f64) -> Self {
        Self::from_kind(ObservableKind::Indicator { low, high })
    }

    /// `x ↦ log x`, i.e. `−|log |x − 0||`.
    pub fn log() -> Self {
        Self::log_distance(0.0).scaled(-1.0, 0.0)
    }

    /// Replaces the affine post-transform `v ↦ scale·v + shift`.
    pub fn scaled(mut self, scale: f64, shift: f64) -> Self {
        self.scale = scale;
        self.shift = shift;
        self
    }

    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// The point where the observable is infinite, if any.
    pub fn singularity(&self) -> Option<f64> {
        match self.kind {
            ObservableKind::LogDistance { z } if self.scale != 0.0 => Some(z),
            _ => None,
        }
    }

    /// Restricts to `φ·𝟙{φ ≤ M}` or `φ·𝟙{φ > M}`. Drops any centring.
    pub fn truncated(&self, level: f64, part: TruncationPart) -> Self {
        Observable {
            truncation: Some(Truncation { level, part }),
            offset: 0.0,
            centered: false,
            ..self.clone()
        }
    }

    /// Subtracts the stationary mean.
    pub fn centered(&self, system: &MarkovSystem) -> Result<Self> {
        let uncentered = Observable {
            offset: 0.0,
            centered: false,
            ..self.clone()
        };
        let mean = uncentered.mean(system)?;
        Ok(Observable {
            offset: mean,
            centered: true,
            ..uncentered
        })
    }

    pub fn check_compatible(&self, system: &MarkovSystem) -> Result<()> {
        match (&self.kind, system.space()) {
            (ObservableKind::Tabular(v), StateSpace::Finite { n_states }) => {
                if v.len() == n_states {
                    Ok(())
                } else {
                    Err(SystemError::IncompatibleObservable(format!(
                        "{} values for {n_states} states",
                        v.len()
                    )))
                }
            }
            (ObservableKind::Tabular(_), StateSpace::UnitInterval) => Err(
                SystemError::IncompatibleObservable("tabular observable on [0,1]".into()),
            ),
            (_, StateSpace::Finite { .. }) => Err(SystemError::IncompatibleObservable(
                "closed-form observable on a finite chain".into(),
            )),
            (ObservableKind::LogDistance { z }, StateSpace::UnitInterval) => {
                if (0.0..=1.0).contains(z) {
                    Ok(())
                } else {
                    Err(SystemError::IncompatibleObservable(format!(
                        "singularity {z} outside [0,1]"
                    )))
                }
            }
            _ => Ok(()),
        }
    }

    #[inline(always)]
    fn base_point(&self, x: f64) -> f64 {
        match self.kind {
            ObservableKind::LogDistance { z } => -(x - z).abs().ln(),
            ObservableKind::Affine { slope, intercept } => slope * x + intercept,
            ObservableKind::Indicator { low, high } => {
                if x >= low && x < high {
                    1.0
                } else {
                    0.0
                }
            }
            ObservableKind::Tabular(_) => f64::NAN,
        }
    }

    #[inline(always)]
    fn finish(&self, raw: f64) -> f64 {
        let v = match self.truncation {
            None => raw,
            Some(Truncation { level, part }) => match part {
                TruncationPart::Bounded if raw <= level => raw,
                TruncationPart::Tail if raw > level => raw,
                _ => 0.0,
            },
        };
        v - self.offset
    }

    /// Value before truncation and centring.
    #[inline(always)]
    pub fn raw_point(&self, x: f64) -> f64 {
        let b = self.base_point(x);
        if self.scale == 0.0 {
            self.shift
        } else {
            self.scale * b + self.shift
        }
    }

    #[inline(always)]
    pub fn eval_point(&self, x: f64) -> f64 {
        self.finish(self.raw_point(x))
    }

    #[inline(always)]
    pub fn raw_state(&self, i: usize) -> f64 {
        match &self.kind {
            ObservableKind::Tabular(v) => self.scale * v[i] + self.shift,
            _ => f64::NAN,
        }
    }

    #[inline(always)]
    pub fn eval_state(&self, i: usize) -> f64 {
        self.finish(self.raw_state(i))
    }

    /// Values on the states of a finite chain.
    pub fn state_values(&self) -> Option<Vec<f64>> {
        match &self.kind {
            ObservableKind::Tabular(v) => Some((0..v.len()).map(|i| self.eval_state(i)).collect()),
            _ => None,
        }
    }

    /// `sup |φ|`, `+∞` for unbounded observables.
    pub fn sup_norm(&self) -> f64 {
        if let Some(values) = self.state_values() {
            return values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let (lo, hi) = self.raw_range();
        let mut candidates: Vec<f64> = Vec::new();
        match self.truncation {
            None => candidates.extend([lo, hi]),
            Some(Truncation { level, part }) => match part {
                TruncationPart::Bounded => {
                    if lo <= level {
                        candidates.extend([lo, hi.min(level)]);
                    }
                    if hi > level {
                        candidates.push(0.0);
                    }
                }
                TruncationPart::Tail => {
                    if hi > level {
                        candidates.extend([lo.max(level), hi]);
                    }
                    if lo <= level {
                        candidates.push(0.0);
                    }
                }
            },
        }
        candidates
            .into_iter()
            .map(|v| (v - self.offset).abs())
            .fold(0.0, f64::max)
    }

    fn raw_range(&self) -> (f64, f64) {
        let (blo, bhi) = match self.kind {
            ObservableKind::LogDistance { z } => (-(z.max(1.0 - z)).ln(), f64::INFINITY),
            ObservableKind::Affine { slope, intercept } => {
                let (a, b) = (intercept, slope + intercept);
                (a.min(b), a.max(b))
            }
            ObservableKind::Indicator { .. } => (0.0, 1.0),
            ObservableKind::Tabular(ref v) => v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x))),
        };
        if self.scale == 0.0 {
            (self.shift, self.shift)
        } else if self.scale > 0.0 {
            (self.scale * blo + self.shift, self.scale * bhi + self.shift)
        } else {
            (self.scale * bhi + self.shift, self.scale * blo + self.shift)
        }
    }

    /// `∫_a^b base(x) dx` in closed form.
    fn base_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self.kind {
            ObservableKind::LogDistance { z } => {
                let g = |x: f64| {
                    let u = x - z;
                    if u == 0.0 {
                        0.0
                    } else {
                        u - u * u.abs().ln()
                    }
                };
                g(b) - g(a)
            }
            ObservableKind::Affine { slope, intercept } => {
                0.5 * slope * (b * b - a * a) + intercept * (b - a)
            }
            ObservableKind::Indicator { low, high } => (b.min(high) - a.max(low)).max(0.0),
            ObservableKind::Tabular(_) => f64::NAN,
        }
    }

    fn raw_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        if self.scale == 0.0 {
            return self.shift * (b - a);
        }
        self.scale * self.base_integral(a, b) + self.shift * (b - a)
    }

    /// The set `{x ∈ [0,1] : scale·base(x) + shift > level}` as disjoint
    /// open intervals.
    pub fn superlevel_set(&self, level: f64) -> Vec<(f64, f64)> {
        let whole = vec![(0.0, 1.0)];
        if self.scale == 0.0 {
            return if self.shift > level { whole } else { vec![] };
        }
        let u = (level - self.shift) / self.scale;
        let clip = |a: f64, b: f64| -> Option<(f64, f64)> {
            let (a, b) = (a.max(0.0), b.min(1.0));
            (b > a).then_some((a, b))
        };
        match self.kind {
            ObservableKind::LogDistance { z } => {
                let r = (-u).exp();
                if self.scale > 0.0 {
                    clip(z - r, z + r).into_iter().collect()
                } else {
                    [clip(0.0, z - r), clip(z + r, 1.0)].into_iter().flatten().collect()
                }
            }
            ObservableKind::Affine { slope, intercept } => {
                let a = self.scale * slope;
                let rhs = level - self.shift - self.scale * intercept;
                if a > 0.0 {
                    clip(rhs / a, 1.0).into_iter().collect()
                } else if a < 0.0 {
                    clip(0.0, rhs / a).into_iter().collect()
                } else if 0.0 > rhs {
                    whole
                } else {
                    vec![]
                }
            }
            ObservableKind::Indicator { low, high } => {
                let inside = self.scale + self.shift > level;
                let outside = self.shift > level;
                match (inside, outside) {
                    (true, true) => whole,
                    (false, false) => vec![],
                    (true, false) => clip(low, high).into_iter().collect(),
                    (false, true) => [clip(0.0, low), clip(high, 1.0)]
                        .into_iter()
                        .flatten()
                        .collect(),
                }
            }
            ObservableKind::Tabular(_) => vec![],
        }
    }

    /// `∫_a^b φ(x) dx` against Lebesgue measure, in closed form.
    pub fn lebesgue_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let raw = self.raw_integral(a, b);
        let truncated = match self.truncation {
            None => raw,
            Some(Truncation { level, part }) => {
                let tail: f64 = self
                    .superlevel_set(level)
                    .into_iter()
                    .map(|(c, d)| self.raw_integral(c.max(a), d.min(b)))
                    .sum();
                match part {
                    TruncationPart::Tail => tail,
                    TruncationPart::Bounded => raw - tail,
                }
            }
        };
        truncated - self.offset * (b - a)
    }

    /// `∫_a^b φ dμ` for a density `μ`.
    pub fn integral(&self, density: &Density, a: f64, b: f64) -> f64 {
        density.integrate(a, b, |c, d| self.lebesgue_integral(c, d))
    }

    /// Stationary mean `∫ φ dμ`.
    pub fn mean(&self, system: &MarkovSystem) -> Result<f64> {
        self.check_compatible(system)?;
        Ok(match system.stationary() {
            Stationary::Vector(pi) => {
                super::compensated_sum(pi.iter().enumerate().map(|(i, p)| p * self.eval_state(i)))
            }
            Stationary::Density(d) => self.integral(d, 0.0, 1.0),
        })
    }

    /// `μ(scale·base + shift > t)`: the survival function of the untruncated
    /// observable (interval systems).
    pub fn survival(&self, density: &Density, t: f64) -> f64 {
        self.superlevel_set(t)
            .into_iter()
            .map(|(a, b)| density.mass(a, b))
            .sum::<f64>()
            .min(1.0)
    }

    /// Conditional means on the `n_cells` uniform cells of `[0,1]`. Cells of
    /// zero stationary mass get their Lebesgue average.
    pub fn cell_averages(&self, system: &MarkovSystem, n_cells: usize) -> Result<Vec<f64>> {
        self.check_compatible(system)?;
        let density = system.density().ok_or_else(|| {
            SystemError::IncompatibleObservable("cell averages need an interval system".into())
        })?;
        let h = 1.0 / n_cells as f64;
        Ok((0..n_cells)
            .map(|i| {
                let (a, b) = (i as f64 * h, if i + 1 == n_cells { 1.0 } else { (i + 1) as f64 * h });
                let mass = density.mass(a, b);
                if mass > 0.0 {
                    self.integral(density, a, b) / mass
                } else {
                    self.lebesgue_integral(a, b) / (b - a)
                }
            })
            .collect())
    }
}
