//! Shared numeric vocabulary: state/measurement vectors, the sliding history
//! window that serves as filter-policy input, deterministic seeded randomness,
//! and trajectory containers.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite entry at index {index} ({context})")]
    NonFinite { index: usize, context: &'static str },
    #[error("empty sequence ({context})")]
    Empty { context: &'static str },
    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },
    #[error("component index {index} out of range for dimension {dim}")]
    ComponentOutOfRange { index: usize, dim: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
}

fn check_finite(values: &[f64], context: &'static str) -> Result<(), CoreError> {
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::NonFinite { index, context });
        }
    }
    Ok(())
}

/// State vector of fixed dimension `n`. Also holds estimates, which share
/// units and dimension with true states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        check_finite(&values, "StateVec::new")?;
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Componentwise sum; dimensions must match.
    pub fn add(&self, other: &[f64]) -> Result<StateVec, CoreError> {
        if other.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: other.len(),
                context: "StateVec::add",
            });
        }
        StateVec::new(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &StateVec) -> Result<Vec<f64>, CoreError> {
        if other.dim() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
                context: "StateVec::sub",
            });
        }
        Ok(self.0.iter().zip(other.as_slice()).map(|(a, b)| a - b).collect())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl std::ops::Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Measurement vector of fixed dimension `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasVec(Vec<f64>);

impl MeasVec {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        check_finite(&values, "MeasVec::new")?;
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for MeasVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Fixed-length ring of `(estimate, measurement)` pairs, newest first.
///
/// The window always holds exactly `capacity` pairs. At episode start it is
/// pre-padded with copies of the initial estimate and the first measurement,
/// so the policy input never has a variable-length warm-up shape. Flattening
/// order is newest-first, estimate before measurement within each pair.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    state_dim: usize,
    meas_dim: usize,
    /// Index 0 is the newest pair.
    pairs: Vec<(StateVec, MeasVec)>,
}

impl HistoryWindow {
    /// Builds a window pre-padded with `capacity` copies of one pair.
    pub fn padded(capacity: usize, estimate: StateVec, measurement: MeasVec) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        let pairs = vec![(estimate.clone(), measurement.clone()); capacity];
        Self {
            state_dim: estimate.dim(),
            meas_dim: measurement.dim(),
            pairs,
        }
    }

    pub fn capacity(&self) -> usize {
        self.pairs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    /// Flattened input length: `capacity * (n + m)`.
    pub fn flat_dim(&self) -> usize {
        self.capacity() * (self.state_dim + self.meas_dim)
    }

    /// Pairs newest-first.
    pub fn pairs(&self) -> &[(StateVec, MeasVec)] {
        &self.pairs
    }

    /// Most recent estimate stored in the window.
    pub fn newest_estimate(&self) -> &StateVec {
        &self.pairs[0].0
    }

    /// Drops the oldest pair and inserts `(new_estimate, new_measurement)` as
    /// the newest. The input window is left unmodified.
    pub fn update(
        &self,
        new_estimate: StateVec,
        new_measurement: MeasVec,
    ) -> Result<HistoryWindow, CoreError> {
        if new_estimate.dim() != self.state_dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.state_dim,
                got: new_estimate.dim(),
                context: "HistoryWindow::update estimate",
            });
        }
        if new_measurement.dim() != self.meas_dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.meas_dim,
                got: new_measurement.dim(),
                context: "HistoryWindow::update measurement",
            });
        }
        let mut pairs = Vec::with_capacity(self.pairs.len());
        pairs.push((new_estimate, new_measurement));
        pairs.extend_from_slice(&self.pairs[..self.pairs.len() - 1]);
        Ok(HistoryWindow {
            state_dim: self.state_dim,
            meas_dim: self.meas_dim,
            pairs,
        })
    }

    /// Writes the flattened window into `out`, newest pair first, estimate
    /// entries before measurement entries within each pair.
    pub fn flatten_into(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.flat_dim(), "flatten buffer size");
        let stride = self.state_dim + self.meas_dim;
        for (k, (est, meas)) in self.pairs.iter().enumerate() {
            let base = k * stride;
            out[base..base + self.state_dim].copy_from_slice(est.as_slice());
            out[base + self.state_dim..base + stride].copy_from_slice(meas.as_slice());
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.flat_dim()];
        self.flatten_into(&mut out);
        out
    }
}

/// Functional form of [`HistoryWindow::update`].
pub fn window_update(
    window: &HistoryWindow,
    new_estimate: StateVec,
    new_measurement: MeasVec,
) -> Result<HistoryWindow, CoreError> {
    window.update(new_estimate, new_measurement)
}

/// Functional form of [`HistoryWindow::flatten`].
pub fn window_flatten(window: &HistoryWindow) -> Vec<f64> {
    window.flatten()
}

/// Componentwise root-mean-square error between two equally long state
/// sequences.
pub fn rmse(
    estimates: &[StateVec],
    truths: &[StateVec],
    component: usize,
) -> Result<f64, CoreError> {
    if estimates.is_empty() {
        return Err(CoreError::Empty { context: "rmse" });
    }
    if estimates.len() != truths.len() {
        return Err(CoreError::LengthMismatch {
            left: estimates.len(),
            right: truths.len(),
            context: "rmse",
        });
    }
    let dim = truths[0].dim();
    if component >= dim {
        return Err(CoreError::ComponentOutOfRange {
            index: component,
            dim,
        });
    }
    let sum_sq: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            let d = e[component] - t[component];
            d * d
        })
        .sum();
    Ok((sum_sq / estimates.len() as f64).sqrt())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seeded random source.
///
/// Backed by the ChaCha12 counter-based generator: identical seeds produce
/// identical draw streams on every platform. Child streams are derived from
/// the parent seed plus a stream index via the generator's 64-bit stream
/// counter (mixed with splitmix64), so they never overlap by construction.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `index`. Derivation depends only on the
    /// parent's seed and stream, never on how many draws were consumed.
    pub fn child(&self, index: u64) -> Rng {
        let stream = splitmix64(self.stream ^ splitmix64(index.wrapping_add(1)));
        Self::with_stream(self.seed, stream)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

/// One simulated rollout: truths, measurements, optional estimates and
/// controls, all of equal length.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub true_states: Vec<StateVec>,
    pub measurements: Vec<MeasVec>,
    pub estimates: Option<Vec<StateVec>>,
    pub controls: Option<Vec<f64>>,
    /// Seconds per step.
    pub dt: f64,
    /// Set when simulation hit a state guard and was truncated early.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.true_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_states.is_empty()
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.dt <= 0.0 {
            return Err(CoreError::NonFinite {
                index: 0,
                context: "Trajectory dt must be positive",
            });
        }
        let t = self.len();
        if self.measurements.len() != t {
            return Err(CoreError::LengthMismatch {
                left: self.measurements.len(),
                right: t,
                context: "Trajectory measurements",
            });
        }
        if let Some(est) = &self.estimates {
            if est.len() != t {
                return Err(CoreError::LengthMismatch {
                    left: est.len(),
                    right: t,
                    context: "Trajectory estimates",
                });
            }
        }
        if let Some(u) = &self.controls {
            if u.len() != t {
                return Err(CoreError::LengthMismatch {
                    left: u.len(),
                    right: t,
                    context: "Trajectory controls",
                });
            }
        }
        Ok(())
    }

    /// Writes the trajectory as CSV: header row then one row per step with
    /// columns `t, x_true_0..n-1, y_0..m-1, x_hat_0..n-1, u`. Absent
    /// estimate/control columns are left empty. Values use 12-significant-
    /// digit shortest formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), CoreError> {
        self.validate()?;
        let n = self.true_states.first().map_or(0, StateVec::dim);
        let m = self.measurements.first().map_or(0, MeasVec::dim);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_true_{i}")));
        header.extend((0..m).map(|i| format!("y_{i}")));
        header.extend((0..n).map(|i| format!("x_hat_{i}")));
        header.push("u".to_string());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.true_states[t].as_slice().iter().map(|v| fmt_g(*v, 12)));
            row.extend(self.measurements[t].as_slice().iter().map(|v| fmt_g(*v, 12)));
            match &self.estimates {
                Some(est) => row.extend(est[t].as_slice().iter().map(|v| fmt_g(*v, 12))),
                None => row.extend(std::iter::repeat(String::new()).take(n)),
            }
            match &self.controls {
                Some(u) => row.push(fmt_g(u[t], 12)),
                None => row.push(String::new()),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CoreError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]; `dt` is not
    /// stored in the CSV and must be supplied.
    pub fn read_csv<R: BufRead>(r: R, n: usize, m: usize, dt: f64) -> Result<Self, CoreError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(CoreError::Empty {
                context: "trajectory csv",
            })??;
        let expected_cols = 1 + n + m + n + 1;
        if header.split(',').count() != expected_cols {
            return Err(CoreError::CsvParse {
                line: 1,
                message: format!(
                    "expected {expected_cols} columns for n={n}, m={m}, got {}",
                    header.split(',').count()
                ),
            });
        }
        let mut true_states = Vec::new();
        let mut measurements = Vec::new();
        let mut estimates: Vec<StateVec> = Vec::new();
        let mut controls: Vec<f64> = Vec::new();
        let mut have_estimates = true;
        let mut have_controls = true;
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(CoreError::CsvParse {
                    line: idx + 2,
                    message: format!("expected {expected_cols} fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, line: usize| -> Result<f64, CoreError> {
                s.parse::<f64>().map_err(|e| CoreError::CsvParse {
                    line,
                    message: format!("bad float {s:?}: {e}"),
                })
            };
            let row = idx + 2;
            let mut col = 1;
            let mut take = |k: usize| -> Vec<&str> {
                let out = fields[col..col + k].to_vec();
                col += k;
                out
            };
            let xt: Result<Vec<f64>, _> = take(n).iter().map(|s| parse(s, row)).collect();
            true_states.push(StateVec::new(xt?)?);
            let y: Result<Vec<f64>, _> = take(m).iter().map(|s| parse(s, row)).collect();
            measurements.push(MeasVec::new(y?)?);
            let xh = take(n);
            if xh.iter().any(|s| s.is_empty()) {
                have_estimates = false;
            } else if have_estimates {
                let vals: Result<Vec<f64>, _> = xh.iter().map(|s| parse(s, row)).collect();
                estimates.push(StateVec::new(vals?)?);
            }
            let u = take(1)[0];
            if u.is_empty() {
                have_controls = false;
            } else if have_controls {
                controls.push(parse(u, row)?);
            }
        }
        let traj = Trajectory {
            true_states,
            measurements,
            estimates: have_estimates.then_some(estimates),
            controls: have_controls.then_some(controls),
            dt,
            diverged: false,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Shortest decimal representation with `sig` significant digits, in the
/// style of C's `%g`: fixed notation for exponents in `[-4, sig)`,
/// exponential otherwise, trailing zeros trimmed.
pub fn fmt_g(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Round to `sig` significant digits first, then pick the notation from
    // the rounded exponent so boundary cases like 999.9999... land right.
    let e_form = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = e_form
        .split_once('e')
        .expect("exponential format always contains 'e'");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -4 || exp >= sig as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        let neg = mantissa.starts_with('-');
        // Reconstruct the fixed form from the rounded digits.
        let mut out = String::new();
        if neg {
            out.push('-');
        }
        if exp >= 0 {
            let int_len = exp as usize + 1;
            out.push_str(&digits[..int_len.min(digits.len())]);
            for _ in digits.len()..int_len {
                out.push('0');
            }
            if decimals > 0 && int_len < digits.len() {
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        } else {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(&digits);
        }
        trim_zeros(&out).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Per-feature input scale for a flattened window: estimate slots carry the
/// state magnitudes, measurement slots the measurement magnitudes. Floors at
/// 1e-6 so constant-zero features stay harmless.
pub fn window_input_scale(window_len: usize, state_rms: &[f64], meas_rms: &[f64]) -> Vec<f64> {
    let mut scale = Vec::with_capacity(window_len * (state_rms.len() + meas_rms.len()));
    for _ in 0..window_len {
        scale.extend(state_rms.iter().map(|v| v.max(1e-6)));
        scale.extend(meas_rms.iter().map(|v| v.max(1e-6)));
    }
    scale
}

/// Root-mean-square per component over a sequence of equally long rows.
pub fn rms_columns(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(*row) {
            *a += v * v;
        }
    }
    acc.iter()
        .map(|a| (a / rows.len().max(1) as f64).sqrt())
        .collect()
}

impl fmt::Display for StateVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", fmt_g(*v, 6))?;
        }
        write!(f, "]")
    }
}
