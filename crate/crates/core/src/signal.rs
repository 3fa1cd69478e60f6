//! Uniform-rate series primitives: resampling, finite differencing,
//! torque normalization and sample-delay shifting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Working rate of the control network and of every evaluation stage.
pub const WORKING_RATE_HZ: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("sample rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("maximum torque must be positive, got {0}")]
    NonPositiveMax(f64),
    #[error("delay must be finite and non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("delay of {shift} samples does not fit a series of {len} samples")]
    DelayExceedsSeries { shift: usize, len: usize },
}

/// A single channel sampled on the grid `start_s + i / rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformSeries {
    rate_hz: f64,
    start_s: f64,
    values: Vec<f64>,
}

impl UniformSeries {
    pub fn new(rate_hz: f64, start_s: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(SignalError::NonPositiveRate(rate_hz));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            rate_hz,
            start_s,
            values,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn start_s(&self) -> f64 {
        self.start_s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Timestamp of sample `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.start_s + i as f64 / self.rate_hz
    }

    pub fn end_s(&self) -> f64 {
        self.time_at(self.values.len().saturating_sub(1))
    }
}

/// Linearly interpolate `series` onto a uniform grid at `target_hz` covering
/// `[start, end]` of the source. Never extrapolates past the last source sample.
pub fn resample(series: &UniformSeries, target_hz: f64) -> Result<UniformSeries, SignalError> {
    if series.len() < 2 {
        return Err(SignalError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(SignalError::NonPositiveRate(target_hz));
    }
    let src = series.values();
    let last = (src.len() - 1) as f64;
    // Source-index distance between successive target samples.
    let step = series.rate_hz / target_hz;
    // Tolerance absorbs representation error in `last / step` for grids that
    // should land exactly on the final sample.
    let count = (last / step + 1e-9).floor() as usize + 1;

    let values = (0..count)
        .map(|j| {
            let pos = (j as f64 * step).min(last);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if frac == 0.0 || i + 1 >= src.len() {
                src[i]
            } else {
                src[i] + frac * (src[i + 1] - src[i])
            }
        })
        .collect();
    UniformSeries::new(target_hz, series.start_s, values)
}

/// First derivative: central differences inside, one-sided first differences
/// at both ends.
pub fn central_diff(series: &UniformSeries) -> Result<UniformSeries, SignalError> {
    let v = series.values();
    let n = v.len();
    if n < 3 {
        return Err(SignalError::TooShort { needed: 3, got: n });
    }
    let rate = series.rate_hz;
    let mut out = Vec::with_capacity(n);
    out.push((v[1] - v[0]) * rate);
    out.extend(v.windows(3).map(|w| (w[2] - w[0]) * rate / 2.0));
    out.push((v[n - 1] - v[n - 2]) * rate);
    UniformSeries::new(rate, series.start_s, out)
}

/// `clamp(tau / tau_max, -1, 1)`.
pub fn normalize_clip_torque(tau_nm: f64, tau_max_nm: f64) -> Result<f64, SignalError> {
    if !(tau_max_nm.is_finite() && tau_max_nm > 0.0) {
        return Err(SignalError::NonPositiveMax(tau_max_nm));
    }
    Ok((tau_nm / tau_max_nm).clamp(-1.0, 1.0))
}

/// Number of whole samples a delay occupies at `rate_hz`.
pub fn delay_samples(delay_s: f64, rate_hz: f64) -> Result<usize, SignalError> {
    if !(delay_s.is_finite() && delay_s >= 0.0) {
        return Err(SignalError::NegativeDelay(delay_s));
    }
    Ok((delay_s * rate_hz).round() as usize)
}

/// A series shifted later in time. Samples before `trim` carry no data and
/// must be skipped by consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub series: UniformSeries,
    pub trim: usize,
}

impl Shifted {
    pub fn valid(&self) -> &[f64] {
        &self.series.values()[self.trim..]
    }
}

/// Delay `series` by `delay_s`, rounded to the nearest sample. Output keeps
/// the input grid; `shifted[i] = series[i - k]` for `i >= k`. The leading
/// `k` slots hold zeros and are reported through `trim`.
pub fn delay_shift(series: &UniformSeries, delay_s: f64) -> Result<Shifted, SignalError> {
    let k = delay_samples(delay_s, series.rate_hz)?;
    let n = series.len();
    if k >= n {
        return Err(SignalError::DelayExceedsSeries { shift: k, len: n });
    }
    let mut values = vec![0.0; n];
    values[k..].copy_from_slice(&series.values()[..n - k]);
    Ok(Shifted {
        series: UniformSeries::new(series.rate_hz, series.start_s, values)?,
        trim: k,
    })
}
