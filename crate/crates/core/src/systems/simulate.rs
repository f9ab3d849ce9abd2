//! Trajectory simulation with deterministic per-trial random streams.
//!
//! Every trial `t` owns a ChaCha8 stream seeded from `(master_seed, t, redraw)`
//! through a splitmix64 hash, so results do not depend on how trials are
//! scheduled across worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    CompensatedSum, Kernel, MarkovSystem, Observable, ObservableKind, PiecewiseAffineMap, Result,
    Stationary, SystemError,
};

/// Redraws allowed per trial before the setup is declared degenerate.
pub const MAX_REDRAWS: u32 = 100;

const SAMPLE_CHUNK: usize = 4096;
const TWO_POW_M64: f64 = 1.0 / 18_446_744_073_709_551_616.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State {
    Index(usize),
    Point(f64),
}

impl State {
    pub fn index(self) -> Option<usize> {
        match self {
            State::Index(i) => Some(i),
            State::Point(_) => None,
        }
    }

    pub fn point(self) -> Option<f64> {
        match self {
            State::Point(x) => Some(x),
            State::Index(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub n_steps: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    /// `S_n φ` per trial, in trial-index order.
    pub birkhoff_sums: Vec<f64>,
    /// `(Z₁, Z_n)` per trial.
    pub endpoints: Vec<(State, State)>,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream used by `trial` on its `redraw`-th attempt.
pub fn derive_seed(master_seed: u64, trial: u64, redraw: u32) -> u64 {
    let h = splitmix64(master_seed);
    let h = splitmix64(h ^ trial);
    splitmix64(h ^ (redraw as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn stream(master_seed: u64, trial: u64, redraw: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, trial, redraw))
}

#[inline]
fn sample_cumulative(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    // Rows are stochastic to 1e-12; pin the last entry so sampling never
    // falls off the end.
    if let Some(last) = cum.last_mut() {
        *last = f64::INFINITY;
    }
    cum
}

#[derive(Debug, Clone)]
struct DensitySampler {
    cum: Vec<f64>,
}

impl DensitySampler {
    fn new(system: &MarkovSystem) -> Self {
        let cum = match system.stationary() {
            Stationary::Density(d) => d.cumulative_bins(),
            Stationary::Vector(_) => vec![1.0],
        };
        DensitySampler { cum }
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let k = self.cum.len();
        if k == 1 {
            return rng.gen::<f64>();
        }
        let u: f64 = rng.gen();
        let bin = sample_cumulative(&self.cum, u);
        (bin as f64 + rng.gen::<f64>()) / k as f64
    }
}

/// Stepping strategy, fixed per system.
#[derive(Debug, Clone)]
enum Plan<'a> {
    Finite { n: usize, rows: Vec<f64>, init: Vec<f64> },
    /// Exact digit-shift simulation of a full binary map from Lebesgue.
    BinaryShift { flags: [bool; 2] },
    Map { map: &'a PiecewiseAffineMap, start: DensitySampler },
    Iid { sampler: DensitySampler },
}

impl<'a> Plan<'a> {
    fn new(system: &'a MarkovSystem) -> Self {
        match (system.kernel(), system.stationary()) {
            (Kernel::Stochastic(m), Stationary::Vector(pi)) => {
                let n = m.dim();
                let rows = (0..n).flat_map(|i| cumulative(m.row(i))).collect();
                Plan::Finite {
                    n,
                    rows,
                    init: cumulative(pi),
                }
            }
            (Kernel::Map(map), Stationary::Density(d)) => match map.binary_shift_orientation() {
                Some(flags) if d.is_uniform() => Plan::BinaryShift { flags },
                _ => Plan::Map {
                    map,
                    start: DensitySampler::new(system),
                },
            },
            _ => Plan::Iid {
                sampler: DensitySampler::new(system),
            },
        }
    }

    fn cursor(&self, rng: &mut ChaCha8Rng) -> Cursor<'_> {
        match self {
            Plan::Finite { n, rows, init } => {
                let state = sample_cumulative(init, rng.gen());
                Cursor::Finite {
                    state,
                    n: *n,
                    rows,
                }
            }
            Plan::BinaryShift { flags } => Cursor::Shift {
                window: rng.next_u64(),
                flip: false,
                flags: *flags,
                buffer: rng.next_u64(),
                remaining: 64,
            },
            Plan::Map { map, start } => Cursor::Map {
                x: start.sample(rng),
                map,
            },
            Plan::Iid { sampler } => Cursor::Iid {
                x: sampler.sample(rng),
                sampler,
            },
        }
    }
}

enum Cursor<'p> {
    Finite {
        state: usize,
        n: usize,
        rows: &'p [f64],
    },
    Shift {
        window: u64,
        flip: bool,
        flags: [bool; 2],
        buffer: u64,
        remaining: u32,
    },
    Map {
        x: f64,
        map: &'p PiecewiseAffineMap,
    },
    Iid {
        x: f64,
        sampler: &'p DensitySampler,
    },
}

impl Cursor<'_> {
    #[inline]
    fn state(&self) -> State {
        match *self {
            Cursor::Finite { state, .. } => State::Index(state),
            Cursor::Shift { window, flip, .. } => {
                let bits = if flip { !window } else { window };
                State::Point(bits as f64 * TWO_POW_M64)
            }
            Cursor::Map { x, .. } | Cursor::Iid { x, .. } => State::Point(x),
        }
    }

    #[inline]
    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        match self {
            Cursor::Finite { state, n, rows } => {
                let row = &rows[*state * *n..(*state + 1) * *n];
                *state = sample_cumulative(row, rng.gen());
            }
            Cursor::Shift {
                window,
                flip,
                flags,
                buffer,
                remaining,
            } => {
                let lead = ((*window >> 63) == 1) ^ *flip;
                if flags[lead as usize] {
                    *flip = !*flip;
                }
                if *remaining == 0 {
                    *buffer = rng.next_u64();
                    *remaining = 64;
                }
                *window = (*window << 1) | (*buffer & 1);
                *buffer >>= 1;
                *remaining -= 1;
            }
            Cursor::Map { x, map } => *x = map.eval(*x),
            Cursor::Iid { x, sampler } => *x = sampler.sample(rng),
        }
    }
}

struct TrialOutcome {
    sum: f64,
    first: State,
    last: State,
}

/// Running value of `S_n φ` along a trajectory.
trait Accumulator {
    /// Adds `φ(state)`; `None` at the singularity.
    fn push(&mut self, state: State) -> Option<()>;
    fn total(&self, n_steps: usize) -> f64;
}

/// Compensated sum of evaluated values.
struct PlainSum<'a> {
    observable: &'a Observable,
    values: Option<&'a [f64]>,
    singular: Option<f64>,
    acc: CompensatedSum,
}

impl Accumulator for PlainSum<'_> {
    #[inline(always)]
    fn push(&mut self, state: State) -> Option<()> {
        let v = match state {
            State::Index(i) => self.values.map_or_else(|| self.observable.eval_state(i), |v| v[i]),
            State::Point(x) => {
                if self.singular == Some(x) {
                    return None;
                }
                self.observable.eval_point(x)
            }
        };
        self.acc.add(v);
        Some(())
    }

    fn total(&self, _: usize) -> f64 {
        self.acc.value()
    }
}

const EXPONENT_MASK: u64 = 0x7ff << 52;
const HALF_EXPONENT: u64 = 1022 << 52;
const TWO_POW_200: f64 = 1.606_938_044_258_990_3e60;

/// `Σ −log|x − z| = −log Π|x − z|` for an untruncated log-distance
/// observable, with the product kept as a mantissa in `[1/2, 1)` and a
/// binary exponent. One logarithm per trajectory instead of one per step;
/// the relative error of the product grows like `n·2⁻⁵³`, the same order
/// as summing rounded logarithms.
///
/// Factors are multiplied in blocks of [`LOG_PRODUCT_BLOCK`] before the
/// product is renormalized. Factors and blocks below [`BLOCK_FLOOR`] are
/// folded at once, so a block never underflows.
struct LogProduct {
    z: f64,
    scale: f64,
    constant: f64,
    mantissa: f64,
    exponent: i64,
    pending: f64,
    count: u32,
}

const LOG_PRODUCT_BLOCK: u32 = 16;
const BLOCK_FLOOR: f64 = 1e-150;

impl LogProduct {
    #[inline(always)]
    fn fold(&mut self, x: f64) {
        let mut product = self.mantissa * x;
        if product < f64::MIN_POSITIVE {
            product *= TWO_POW_200;
            self.exponent -= 200;
        }
        let bits = product.to_bits();
        self.exponent += ((bits & EXPONENT_MASK) >> 52) as i64 - 1022;
        self.mantissa = f64::from_bits((bits & !EXPONENT_MASK) | HALF_EXPONENT);
    }
}

impl Accumulator for LogProduct {
    #[inline(always)]
    fn push(&mut self, state: State) -> Option<()> {
        let d = (state.point()? - self.z).abs();
        if d < BLOCK_FLOOR {
            if d == 0.0 {
                return None;
            }
            let pending = std::mem::replace(&mut self.pending, 1.0);
            self.fold(pending);
            self.fold(d);
            self.count = 0;
            return Some(());
        }
        self.pending *= d;
        self.count += 1;
        if self.count == LOG_PRODUCT_BLOCK || self.pending < BLOCK_FLOOR {
            let pending = std::mem::replace(&mut self.pending, 1.0);
            self.fold(pending);
            self.count = 0;
        }
        Some(())
    }

    fn total(&self, n_steps: usize) -> f64 {
        let log_product =
            self.mantissa.ln() + self.exponent as f64 * std::f64::consts::LN_2 + self.pending.ln();
        -self.scale * log_product + self.constant * n_steps as f64
    }
}

impl LogProduct {
    fn for_observable(observable: &Observable) -> Option<Self> {
        match *observable.kind() {
            ObservableKind::LogDistance { z }
                if observable.truncation().is_none() && observable.scale() != 0.0 =>
            {
                Some(LogProduct {
                    z,
                    scale: observable.scale(),
                    constant: observable.shift() - observable.offset(),
                    mantissa: 0.5,
                    exponent: 1,
                    pending: 1.0,
                    count: 0,
                })
            }
            _ => None,
        }
    }
}

#[inline(always)]
fn walk<C, A>(first: State, n_steps: usize, rng: &mut ChaCha8Rng, mut acc: C, mut advance: A) -> Option<TrialOutcome>
where
    C: Accumulator,
    A: FnMut(&mut ChaCha8Rng) -> State,
{
    acc.push(first)?;
    let mut last = first;
    for _ in 1..n_steps {
        last = advance(rng);
        acc.push(last)?;
    }
    Some(TrialOutcome {
        sum: acc.total(n_steps),
        first,
        last,
    })
}

#[inline(always)]
fn walk_cursor<C: Accumulator>(mut cursor: Cursor<'_>, n_steps: usize, rng: &mut ChaCha8Rng, acc: C) -> Option<TrialOutcome> {
    let first = cursor.state();
    // The digit shift dominates large studies; give it its own loop.
    if let Cursor::Shift {
        mut window,
        mut flip,
        flags,
        mut buffer,
        mut remaining,
    } = cursor
    {
        return walk(first, n_steps, rng, acc, |rng| {
            let lead = ((window >> 63) == 1) ^ flip;
            flip ^= flags[lead as usize];
            if remaining == 0 {
                buffer = rng.next_u64();
                remaining = 64;
            }
            window = (window << 1) | (buffer & 1);
            buffer >>= 1;
            remaining -= 1;
            let bits = if flip { !window } else { window };
            State::Point(bits as f64 * TWO_POW_M64)
        });
    }
    walk(first, n_steps, rng, acc, |rng| {
        cursor.advance(rng);
        cursor.state()
    })
}

/// Runs one trial; `None` when the path hits the observable's singularity.
fn run_trial(
    plan: &Plan<'_>,
    values: Option<&[f64]>,
    observable: &Observable,
    singular: Option<f64>,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Option<TrialOutcome> {
    let cursor = plan.cursor(rng);
    match LogProduct::for_observable(observable) {
        Some(acc) if matches!(cursor, Cursor::Shift { .. } | Cursor::Map { .. } | Cursor::Iid { .. }) => {
            walk_cursor(cursor, n_steps, rng, acc)
        }
        _ => walk_cursor(
            cursor,
            n_steps,
            rng,
            PlainSum {
                observable,
                values,
                singular,
                acc: CompensatedSum::new(),
            },
        ),
    }
}

/// Simulates `n_trials` independent stationary trajectories of length
/// `n_steps` and records `S_n φ` for each.
///
/// Trials are distributed over the current rayon pool and merged in
/// trial-index order, so the output is bit-identical for any pool size.
/// A trial landing exactly on the singularity of `observable` is redrawn
/// from a derived sub-seed.
pub fn simulate_batch(
    system: &MarkovSystem,
    observable: &Observable,
    n_steps: usize,
    n_trials: usize,
    master_seed: u64,
) -> Result<TrajectoryBatch> {
    if n_steps == 0 || n_trials == 0 {
        return Err(SystemError::InvalidArgument(
            "n_steps and n_trials must be positive".into(),
        ));
    }
    observable.check_compatible(system)?;
    let plan = Plan::new(system);
    let values = observable.state_values();
    let singular = observable.singularity();

    let outcomes: Vec<TrialOutcome> = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            for redraw in 0..MAX_REDRAWS {
                let mut rng = stream(master_seed, trial, redraw);
                if let Some(out) = run_trial(
                    &plan,
                    values.as_deref(),
                    observable,
                    singular,
                    n_steps,
                    &mut rng,
                ) {
                    return Ok(out);
                }
            }
            Err(SystemError::SingularityHit { trial })
        })
        .collect::<Result<_>>()?;

    let mut birkhoff_sums = Vec::with_capacity(n_trials);
    let mut endpoints = Vec::with_capacity(n_trials);
    for o in outcomes {
        birkhoff_sums.push(o.sum);
        endpoints.push((o.first, o.last));
    }
    Ok(TrajectoryBatch {
        n_steps,
        n_trials,
        master_seed,
        birkhoff_sums,
        endpoints,
    })
}

/// A single stationary trajectory `Z₁, …, Z_n`.
pub fn simulate_path(system: &MarkovSystem, n_steps: usize, seed: u64) -> Vec<State> {
    let plan = Plan::new(system);
    let mut rng = stream(seed, 0, 0);
    let mut cursor = plan.cursor(&mut rng);
    let mut path = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        if step > 0 {
            cursor.advance(&mut rng);
        }
        path.push(cursor.state());
    }
    path
}

/// `count` independent draws of `φ(Z)` with `Z` stationary.
pub fn sample_observable(
    system: &MarkovSystem,
    observable: &Observable,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    observable.check_compatible(system)?;
    let plan = Plan::new(system);
    let values = observable.state_values();
    let singular = observable.singularity();
    let chunks: Vec<Vec<f64>> = (0..count.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let len = SAMPLE_CHUNK.min(count - chunk * SAMPLE_CHUNK);
            let mut rng = stream(seed, chunk as u64, 0);
            let mut out = Vec::with_capacity(len);
            let mut misses = 0;
            while out.len() < len {
                match run_trial(&plan, values.as_deref(), observable, singular, 1, &mut rng) {
                    Some(o) => {
                        out.push(o.sum);
                        misses = 0;
                    }
                    None => {
                        misses += 1;
                        if misses >= MAX_REDRAWS {
                            return Err(SystemError::SingularityHit {
                                trial: chunk as u64,
                            });
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Relative slack in [`exceeds`], so that lattice ties `|x| = eps` that
/// rounding pushes just above `eps` are not counted as deviations.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `|x| > eps` up to [`TIE_TOLERANCE`].
#[inline]
pub fn exceeds(x: f64, eps: f64) -> bool {
    x.abs() > eps * (1.0 + TIE_TOLERANCE) + TIE_TOLERANCE
}

/// Number of trials with `|S_n/n − mean| > eps`.
pub fn deviation_indicator(batch: &TrajectoryBatch, mean: f64, eps: f64) -> usize {
    let n = batch.n_steps as f64;
    batch
        .birkhoff_sums
        .iter()
        .filter(|&&s| exceeds(s / n - mean, eps))
        .count()
}
