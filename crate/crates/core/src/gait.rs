//! Gait-cycle segmentation anchored at maximum hip flexion, 0-100% cycle
//! normalization and ensemble statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Joint, Trial};
use crate::signal::{SignalError, UniformSeries};

/// Points on the normalized cycle grid (1% resolution, both ends included).
pub const CYCLE_POINTS: usize = 101;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("signal range below 1e-9; cannot locate peaks")]
    DegenerateSignal,
    #[error("no complete gait cycle found")]
    NoCyclesFound,
    #[error("signal of {got} samples is shorter than two minimum cycles ({needed})")]
    SignalTooShort { needed: usize, got: usize },
    #[error("cycle span {start}..={end} is too short")]
    SpanTooShort { start: usize, end: usize },
    #[error("cycle span ends at {end} beyond series length {len}")]
    SpanOutOfRange { end: usize, len: usize },
    #[error("empty cycle set")]
    EmptySet,
    #[error("profiles have unequal lengths")]
    LengthMismatch,
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    /// Minimum spacing between anchors, seconds.
    pub min_cycle_s: f64,
    /// Minimum peak prominence as a fraction of the signal range.
    pub prominence_frac: f64,
    /// Cycles whose duration deviates from the median by more than this
    /// fraction are dropped.
    pub duration_tolerance: f64,
    /// Hip channel whose flexion maxima anchor the cycle.
    pub anchor_joint: Joint,
    /// Negate the anchor channel so that flexion is positive.
    pub flip_flexion: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            min_cycle_s: 0.6,
            prominence_frac: 0.3,
            duration_tolerance: 0.3,
            anchor_joint: Joint::HipL,
            flip_flexion: false,
        }
    }
}

/// One gait cycle between consecutive anchors, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSpan {
    pub start: usize,
    pub end: usize,
}

impl CycleSpan {
    pub fn samples(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    /// Every qualifying flexion peak, ascending.
    pub anchors: Vec<usize>,
    /// Complete cycles that survived the duration filter.
    pub cycles: Vec<CycleSpan>,
}

/// Interior local maxima; plateaus report their middle index.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Height of a peak above the higher of its two bases, where each base is the
/// lowest point between the peak and the nearest strictly higher sample (or
/// the series end) on that side.
fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left_min = h;
    for &v in x[..p].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Keep the tallest peaks so that no two are closer than `min_dist` samples.
fn enforce_spacing(x: &[f64], peaks: &[usize], min_dist: usize) -> Vec<usize> {
    let mut by_height: Vec<usize> = (0..peaks.len()).collect();
    // stable: equal heights keep the earlier peak first
    by_height.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]));
    let mut keep = vec![true; peaks.len()];
    for &k in &by_height {
        if !keep[k] {
            continue;
        }
        for (m, flag) in keep.iter_mut().enumerate() {
            if m != k && *flag && peaks[m].abs_diff(peaks[k]) < min_dist {
                *flag = false;
            }
        }
    }
    peaks
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Locate flexion-peak anchors in a flexion-positive hip signal and return
/// the complete cycles between them.
pub fn segment_cycles(
    hip_flexion: &UniformSeries,
    cfg: &SegmentConfig,
) -> Result<Segmentation, GaitError> {
    if !(cfg.min_cycle_s.is_finite() && cfg.min_cycle_s > 0.0) {
        return Err(GaitError::InvalidConfig("min_cycle_s must be > 0".into()));
    }
    if !(cfg.prominence_frac.is_finite() && cfg.prominence_frac >= 0.0) {
        return Err(GaitError::InvalidConfig(
            "prominence_frac must be >= 0".into(),
        ));
    }
    if !(cfg.duration_tolerance.is_finite() && cfg.duration_tolerance >= 0.0) {
        return Err(GaitError::InvalidConfig(
            "duration_tolerance must be >= 0".into(),
        ));
    }
    let x = hip_flexion.values();
    // slack keeps e.g. 0.6 s * 100 Hz at 60 samples despite rounding
    let min_dist = (cfg.min_cycle_s * hip_flexion.rate_hz() - 1e-9).ceil() as usize;
    if x.len() < 2 * min_dist {
        return Err(GaitError::SignalTooShort {
            needed: 2 * min_dist,
            got: x.len(),
        });
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range < 1e-9 {
        return Err(GaitError::DegenerateSignal);
    }
    let threshold = cfg.prominence_frac * range;
    let prominent: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= threshold)
        .collect();
    let anchors = enforce_spacing(x, &prominent, min_dist);
    if anchors.len() < 2 {
        return Err(GaitError::NoCyclesFound);
    }
    let spans: Vec<CycleSpan> = anchors
        .windows(2)
        .map(|w| CycleSpan {
            start: w[0],
            end: w[1],
        })
        .collect();
    let durations: Vec<f64> = spans.iter().map(|s| s.samples() as f64).collect();
    let med = median(&durations);
    let cycles: Vec<CycleSpan> = spans
        .into_iter()
        .filter(|s| (s.samples() as f64 - med).abs() <= cfg.duration_tolerance * med)
        .collect();
    if cycles.is_empty() {
        return Err(GaitError::NoCyclesFound);
    }
    Ok(Segmentation { anchors, cycles })
}

/// Segment a trial using the configured anchor hip.
pub fn segment_trial(trial: &Trial, cfg: &SegmentConfig) -> Result<Segmentation, GaitError> {
    let mut hip = trial.angles_rad[cfg.anchor_joint.index()].clone();
    if cfg.flip_flexion {
        hip.iter_mut().for_each(|v| *v = -*v);
    }
    let series = UniformSeries::new(trial.sample_rate_hz, trial.start_s(), hip)?;
    segment_cycles(&series, cfg)
}

fn normalize_slice(x: &[f64], start: usize, end: usize) -> Result<Vec<f64>, GaitError> {
    if end < start + 2 {
        return Err(GaitError::SpanTooShort { start, end });
    }
    if end >= x.len() {
        return Err(GaitError::SpanOutOfRange { end, len: x.len() });
    }
    let span = (end - start) as f64;
    let last = CYCLE_POINTS - 1;
    Ok((0..CYCLE_POINTS)
        .map(|k| {
            if k == last {
                return x[end];
            }
            let pos = start as f64 + k as f64 * span / last as f64;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if frac == 0.0 {
                x[i]
            } else {
                x[i] + frac * (x[i + 1] - x[i])
            }
        })
        .collect())
}

/// Linearly interpolate `channel[start..=end]` onto the 101-point cycle grid.
pub fn normalize_cycle(
    channel: &UniformSeries,
    start: usize,
    end: usize,
) -> Result<Vec<f64>, GaitError> {
    normalize_slice(channel.values(), start, end)
}

/// Pointwise mean and population standard deviation.
pub fn ensemble(cycles: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), GaitError> {
    let first = cycles.first().ok_or(GaitError::EmptySet)?;
    let len = first.len();
    if cycles.iter().any(|c| c.len() != len) {
        return Err(GaitError::LengthMismatch);
    }
    let n = cycles.len() as f64;
    let mean: Vec<f64> = (0..len)
        .map(|k| cycles.iter().map(|c| c[k]).sum::<f64>() / n)
        .collect();
    let sd = (0..len)
        .map(|k| {
            let var = cycles.iter().map(|c| (c[k] - mean[k]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    Ok((mean, sd))
}

/// Cycles of one named channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelCycles {
    pub name: String,
    /// Raw samples of each cycle, `start..end` (half-open so cycles tile).
    pub segments: Vec<Vec<f64>>,
    /// 101-point normalized profile of each cycle.
    pub profiles: Vec<Vec<f64>>,
    pub mean_profile: Vec<f64>,
    pub sd_profile: Vec<f64>,
}

/// Several channels cut at the same cycle boundaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaitCycleSet {
    pub cycles: Vec<CycleSpan>,
    pub channels: Vec<ChannelCycles>,
    pub source_rate_hz: f64,
}

impl GaitCycleSet {
    /// Cut every channel at `spans`. All channels share the source grid.
    pub fn build(
        spans: &[CycleSpan],
        channels: &[(String, &[f64])],
        source_rate_hz: f64,
    ) -> Result<Self, GaitError> {
        if spans.is_empty() {
            return Err(GaitError::EmptySet);
        }
        let channels = channels
            .iter()
            .map(|(name, x)| {
                let profiles = spans
                    .iter()
                    .map(|s| normalize_slice(x, s.start, s.end))
                    .collect::<Result<Vec<_>, _>>()?;
                let segments = spans.iter().map(|s| x[s.start..s.end].to_vec()).collect();
                let (mean_profile, sd_profile) = ensemble(&profiles)?;
                Ok(ChannelCycles {
                    name: name.clone(),
                    segments,
                    profiles,
                    mean_profile,
                    sd_profile,
                })
            })
            .collect::<Result<Vec<_>, GaitError>>()?;
        Ok(Self {
            cycles: spans.to_vec(),
            channels,
            source_rate_hz,
        })
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelCycles> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Start index of every cycle followed by the end of the last one.
    pub fn anchor_indices(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.cycles.iter().map(|c| c.start).collect();
        if let Some(last) = self.cycles.last() {
            a.push(last.end);
        }
        a.dedup();
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(period_s: f64, duration_s: f64, rate: f64) -> UniformSeries {
        let n = (duration_s * rate).round() as usize;
        let v = (0..n)
            .map(|i| (2.0 * PI * i as f64 / rate / period_s).sin())
            .collect();
        UniformSeries::new(rate, 0.0, v).unwrap()
    }

    #[test]
    fn sinusoid_anchors_every_period() {
        let seg = segment_cycles(&sine(1.2, 10.0, 100.0), &SegmentConfig::default()).unwrap();
        assert_eq!(seg.cycles.len(), 7);
        for w in seg.anchors.windows(2) {
            assert!(w[1].abs_diff(w[0]).abs_diff(120) <= 1, "{:?}", seg.anchors);
        }
        // first flexion peak at t = 0.3 s
        assert_eq!(seg.anchors[0], 30);
    }

    #[test]
    fn constant_signal_is_degenerate() {
        let s = UniformSeries::new(100.0, 0.0, vec![0.4; 500]).unwrap();
        assert_eq!(
            segment_cycles(&s, &SegmentConfig::default()),
            Err(GaitError::DegenerateSignal)
        );
    }

    #[test]
    fn single_period_has_no_cycle() {
        assert_eq!(
            segment_cycles(&sine(1.2, 1.2, 100.0), &SegmentConfig::default()),
            Err(GaitError::NoCyclesFound)
        );
    }

    #[test]
    fn too_short_for_two_cycles() {
        assert!(matches!(
            segment_cycles(&sine(1.2, 1.0, 100.0), &SegmentConfig::default()),
            Err(GaitError::SignalTooShort {
                needed: 120,
                got: 100
            })
        ));
    }

    #[test]
    fn small_ripples_are_not_anchors() {
        let rate = 100.0;
        let v: Vec<f64> = (0..1000)
            .map(|i| {
                let t = i as f64 / rate;
                (2.0 * PI * t / 1.2).sin() + 0.05 * (2.0 * PI * t * 9.0).sin()
            })
            .collect();
        let seg = segment_cycles(
            &UniformSeries::new(rate, 0.0, v).unwrap(),
            &SegmentConfig::default(),
        )
        .unwrap();
        assert_eq!(seg.anchors.len(), 8, "{:?}", seg.anchors);
        for w in seg.anchors.windows(2) {
            assert!(w[1].abs_diff(w[0]).abs_diff(120) <= 10, "{:?}", seg.anchors);
        }
    }

    #[test]
    fn irregular_stride_is_dropped() {
        // Periods of 1.2 s except one stretched 1.8 s stride.
        let rate = 100.0;
        let mut v = Vec::new();
        let mut phase = 0.0;
        for k in 0..9 {
            let period: f64 = if k == 4 { 1.8 } else { 1.2 };
            let n = (period * rate) as usize;
            for _ in 0..n {
                v.push((2.0 * PI * phase).sin());
                phase += 1.0 / (period * rate);
            }
        }
        let seg = segment_cycles(
            &UniformSeries::new(rate, 0.0, v).unwrap(),
            &SegmentConfig::default(),
        )
        .unwrap();
        // gaps around the long stride: 135 (kept) and 165 (> 30% off, dropped)
        assert!(seg.cycles.iter().all(|c| c.samples().abs_diff(120) <= 36));
        assert_eq!(seg.cycles.len(), seg.anchors.len() - 2);
        assert!(seg.cycles.iter().all(|c| c.samples() != 165));
    }

    #[test]
    fn normalize_identity_and_linear() {
        let v: Vec<f64> = (0..150).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = UniformSeries::new(100.0, 0.0, v.clone()).unwrap();
        assert_eq!(normalize_cycle(&s, 20, 120).unwrap(), v[20..=120].to_vec());

        let lin = UniformSeries::new(100.0, 0.0, (0..200).map(|i| 3.0 * i as f64 - 1.0).collect())
            .unwrap();
        let p = normalize_cycle(&lin, 10, 73).unwrap();
        for (k, y) in p.iter().enumerate() {
            let pos = 10.0 + k as f64 * 63.0 / 100.0;
            assert!((y - (3.0 * pos - 1.0)).abs() < 1e-12);
        }
        assert_eq!(p[0], lin.values()[10]);
        assert_eq!(p[100], lin.values()[73]);
        assert_eq!(
            normalize_cycle(&lin, 5, 6),
            Err(GaitError::SpanTooShort { start: 5, end: 6 })
        );
    }

    #[test]
    fn normalize_sinusoid_period() {
        let s = sine(1.2, 3.0, 100.0);
        let p = normalize_cycle(&s, 0, 120).unwrap();
        for (k, y) in p.iter().enumerate() {
            let expected = (2.0 * PI * k as f64 / 100.0).sin();
            assert!((y - expected).abs() < 1e-3, "{k}: {y} vs {expected}");
        }
    }

    #[test]
    fn ensemble_cases() {
        let c = vec![1.0, -2.0, 3.0];
        let (m, sd) = ensemble(std::slice::from_ref(&c)).unwrap();
        assert_eq!(m, c);
        assert_eq!(sd, vec![0.0; 3]);

        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        let (m, sd) = ensemble(&[c.clone(), neg]).unwrap();
        assert_eq!(m, vec![0.0; 3]);
        assert_eq!(sd, vec![1.0, 2.0, 3.0]);

        assert_eq!(ensemble(&[]), Err(GaitError::EmptySet));
    }

    #[test]
    fn ensemble_against_direct_computation() {
        let cycles = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 2.0, 1.0],
            vec![0.0, 4.0, 2.0],
            vec![3.0, 0.0, 2.0],
            vec![4.0, 2.0, 2.0],
        ];
        // column 0: 1,2,0,3,4 -> mean 2, deviations -1,0,-2,1,2 -> var 10/5 = 2
        // column 1: 2,2,4,0,2 -> mean 2, deviations 0,0,2,-2,0 -> var 8/5
        // column 2: 3,1,2,2,2 -> mean 2, deviations 1,-1,0,0,0 -> var 2/5
        let (m, sd) = ensemble(&cycles).unwrap();
        assert_eq!(m, vec![2.0, 2.0, 2.0]);
        let expected = [2.0f64.sqrt(), 1.6f64.sqrt(), 0.4f64.sqrt()];
        for (a, b) in sd.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cycle_set_mean_is_recomputable() {
        let s = sine(1.2, 10.0, 100.0);
        let seg = segment_cycles(&s, &SegmentConfig::default()).unwrap();
        let cos: Vec<f64> = (0..s.len()).map(|i| (i as f64 * 0.05).cos()).collect();
        let set = GaitCycleSet::build(
            &seg.cycles,
            &[("hip".into(), s.values()), ("other".into(), &cos)],
            100.0,
        )
        .unwrap();
        let ch = set.channel("other").unwrap();
        let (m, _) = ensemble(&ch.profiles).unwrap();
        for (a, b) in m.iter().zip(&ch.mean_profile) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(ch.segments[0].len(), seg.cycles[0].samples());
        assert_eq!(set.anchor_indices().len(), 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn anchors_invariant_to_positive_affine(a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let s = sine(1.2, 10.0, 100.0);
            let scaled = UniformSeries::new(100.0, 0.0, s.values().iter().map(|v| a * v + b).collect()).unwrap();
            let cfg = SegmentConfig::default();
            prop_assert_eq!(segment_cycles(&s, &cfg).unwrap(), segment_cycles(&scaled, &cfg).unwrap());
        }

        #[test]
        fn anchors_shift_with_prepended_lead(k in 0usize..60) {
            let s = sine(1.2, 10.0, 100.0);
            let mut v = vec![s.values()[0]; k];
            v.extend_from_slice(s.values());
            let shifted = UniformSeries::new(100.0, 0.0, v).unwrap();
            let cfg = SegmentConfig::default();
            let a = segment_cycles(&s, &cfg).unwrap();
            let b = segment_cycles(&shifted, &cfg).unwrap();
            prop_assert_eq!(b.anchors, a.anchors.iter().map(|i| i + k).collect::<Vec<_>>());
        }

        #[test]
        fn normalize_exact_on_affine(a in -10.0f64..10.0, b in -10.0f64..10.0, start in 0usize..50, len in 2usize..300) {
            let x: Vec<f64> = (0..start + len + 1).map(|i| a * i as f64 + b).collect();
            let s = UniformSeries::new(100.0, 0.0, x).unwrap();
            let p = normalize_cycle(&s, start, start + len).unwrap();
            for (k, y) in p.iter().enumerate() {
                let pos = start as f64 + k as f64 * len as f64 / 100.0;
                prop_assert!((y - (a * pos + b)).abs() < 1e-9);
            }
        }
    }
}
