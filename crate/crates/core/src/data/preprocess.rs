use serde::{Deserialize, Serialize};

use super::{DataError, Result, Window};
use crate::Domain;

/// One continuous multichannel stream of a single user. Missing samples
/// are NaN; `None` labels mark unlabeled timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub user: String,
    /// `C` rows of `N` samples.
    pub channels: Vec<Vec<f64>>,
    pub labels: Vec<Option<usize>>,
    pub rate_hz: f64,
}

impl RawRecording {
    pub fn new(user: impl Into<String>, channels: Vec<Vec<f64>>, labels: Vec<Option<usize>>, rate_hz: f64) -> Result<Self> {
        let n = labels.len();
        if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
            return Err(DataError::InvalidParameter(format!(
                "channel rows must all have {n} samples"
            )));
        }
        if !(rate_hz > 0.0) {
            return Err(DataError::InvalidParameter(format!("sampling rate {rate_hz} must be positive")));
        }
        Ok(Self {
            user: user.into(),
            channels,
            labels,
            rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fills non-finite samples by linear interpolation between the nearest
/// valid neighbours; leading and trailing gaps take the nearest valid value.
pub fn clean_and_interpolate(recording: &RawRecording) -> Result<RawRecording> {
    let mut out = recording.clone();
    for (c, row) in out.channels.iter_mut().enumerate() {
        let valid: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_finite()).collect();
        let (Some(&first), Some(&last)) = (valid.first(), valid.last()) else {
            return Err(DataError::EmptyChannel(c));
        };
        for i in 0..first {
            row[i] = row[first];
        }
        for i in last + 1..row.len() {
            row[i] = row[last];
        }
        for pair in valid.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (row[a], row[b]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                row[i] = va + t * (vb - va);
            }
        }
    }
    Ok(out)
}

/// Which data the per-channel range is estimated from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScope {
    /// Union of source and target recordings.
    #[default]
    Global,
    /// Source recordings only; target values are clipped into range.
    SourceOnly,
}

/// Per-channel minimum and maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit<'a>(recordings: impl IntoIterator<Item = &'a RawRecording>) -> Result<Self> {
        let mut stats: Option<Self> = None;
        for rec in recordings {
            let s = stats.get_or_insert_with(|| Self {
                min: vec![f64::INFINITY; rec.channels.len()],
                max: vec![f64::NEG_INFINITY; rec.channels.len()],
            });
            if s.min.len() != rec.channels.len() {
                return Err(DataError::InvalidParameter("recordings differ in channel count".into()));
            }
            for (c, row) in rec.channels.iter().enumerate() {
                for &v in row.iter().filter(|v| v.is_finite()) {
                    s.min[c] = s.min[c].min(v);
                    s.max[c] = s.max[c].max(v);
                }
            }
        }
        stats.ok_or_else(|| DataError::InvalidParameter("no recordings to normalize".into()))
    }

    /// Maps `[min, max]` onto `[-1, 1]`; constant channels map to 0.
    pub fn apply_value(&self, channel: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if !(hi > lo) {
            return 0.0;
        }
        (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn apply(&self, recording: &RawRecording) -> RawRecording {
        let mut out = recording.clone();
        for (c, row) in out.channels.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = self.apply_value(c, *v);
            }
        }
        out
    }
}

/// Normalizes every recording with statistics fitted on all of them.
pub fn normalize_per_channel(recordings: &[RawRecording]) -> Result<(Vec<RawRecording>, NormalizationStats)> {
    let stats = NormalizationStats::fit(recordings)?;
    Ok((recordings.iter().map(|r| stats.apply(r)).collect(), stats))
}

/// Window label: most frequent class, lowest index on ties. `None` when
/// unlabeled timesteps strictly outnumber every class.
fn majority_label(labels: &[Option<usize>]) -> Option<usize> {
    let n_classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    let mut unlabeled = 0;
    for l in labels {
        match l {
            Some(c) => counts[*c] += 1,
            None => unlabeled += 1,
        }
    }
    let (best, &count) = counts.iter().enumerate().rev().max_by_key(|(_, c)| **c)?;
    (count > 0 && count >= unlabeled).then_some(best)
}

/// Sliding windows of `window_len` samples every `stride` samples.
pub fn segment_frames(recording: &RawRecording, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    let n = recording.len();
    if window_len == 0 || stride == 0 {
        return Err(DataError::InvalidParameter("window length and stride must be positive".into()));
    }
    if n < window_len {
        return Err(DataError::TooShort {
            samples: n,
            window: window_len,
        });
    }
    let count = (n - window_len) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        let Some(label) = majority_label(&recording.labels[start..start + window_len]) else {
            continue;
        };
        let mut data = Vec::with_capacity(recording.channels.len() * window_len);
        for row in &recording.channels {
            data.extend(row[start..start + window_len].iter().map(|&v| v as f32));
        }
        out.push(Window {
            data,
            label,
            user: recording.user.clone(),
            domain: Domain::Source,
        });
    }
    Ok(out)
}

/// Windows of `round(window_seconds · rate)` samples with the given overlap.
pub fn segment(recording: &RawRecording, window_seconds: f64, overlap_fraction: f64) -> Result<Vec<Window>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DataError::InvalidParameter(format!("overlap {overlap_fraction} outside [0, 1)")));
    }
    let len = (window_seconds * recording.rate_hz).round() as usize;
    let stride = ((len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    segment_frames(recording, len, stride)
}

/// Sampling and windowing parameters of a public dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPreset {
    pub name: String,
    pub rate_hz: f64,
    pub window_seconds: f64,
    pub overlap: f64,
}

impl DatasetPreset {
    pub fn sbhar() -> Self {
        Self::new("sbhar", 50.0, 2.56, 0.5)
    }

    pub fn opportunity() -> Self {
        Self::new("opportunity", 30.0, 3.0, 0.5)
    }

    pub fn realworld() -> Self {
        Self::new("realworld", 50.0, 3.0, 0.5)
    }

    fn new(name: &str, rate_hz: f64, window_seconds: f64, overlap: f64) -> Self {
        Self {
            name: name.to_string(),
            rate_hz,
            window_seconds,
            overlap,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sbhar" => Some(Self::sbhar()),
            "opportunity" => Some(Self::opportunity()),
            "realworld" => Some(Self::realworld()),
            _ => None,
        }
    }

    pub fn window_len(&self) -> usize {
        (self.window_seconds * self.rate_hz).round() as usize
    }
}
