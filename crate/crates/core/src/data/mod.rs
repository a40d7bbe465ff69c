//! Sensor-recording ingestion, preprocessing, windowing, splits, synthetic
//! cross-user tasks and the windowed-dataset cache.

mod cache;
mod csv_io;
mod preprocess;
mod splits;
mod synthetic;

use std::collections::BTreeSet;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};
use crate::Domain;

pub use cache::{read_cache, write_cache, CACHE_SCHEMA_VERSION};
pub use csv_io::{load_csv, CsvSchema};
pub use preprocess::{
    clean_and_interpolate, normalize_per_channel, segment, segment_frames, DatasetPreset, NormalizationScope,
    NormalizationStats, RawRecording,
};
pub use splits::{apply_transition_protocol, make_splits, SplitPlan};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("timestamps of user {user} decrease at row {row}")]
    NonMonotonicTimestamp { user: String, row: usize },
    #[error("row {row}: class index {class} is not below {n_classes}")]
    UnknownClass { row: usize, class: i64, n_classes: usize },
    #[error("channel {0} has no valid value")]
    EmptyChannel(usize),
    #[error("recording has {samples} samples, shorter than one window of {window}")]
    TooShort { samples: usize, window: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One fixed-length multichannel segment, channel-major (`C × L`).
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub data: Vec<f32>,
    pub label: usize,
    pub user: String,
    pub domain: Domain,
}

/// Windows sharing one shape, with the preprocessing that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub channels: usize,
    pub window_len: usize,
    pub n_classes: usize,
    pub preset: String,
    pub stats: Option<NormalizationStats>,
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Distinct user ids in sorted order.
    pub fn users(&self) -> Vec<String> {
        self.windows
            .iter()
            .map(|w| w.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Indices of windows whose user satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(&Window) -> bool) -> Vec<usize> {
        (0..self.windows.len()).filter(|&i| keep(&self.windows[i])).collect()
    }

    /// Stacks the selected windows into `[n, C, L]`.
    pub fn tensor<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let per = self.channels * self.window_len;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let w = self
                .windows
                .get(i)
                .ok_or_else(|| DataError::InvalidParameter(format!("window index {i} out of range")))?;
            data.extend(w.data.iter().map(|&v| T::lit(f64::from(v))));
        }
        Ok(Tensor::new(vec![indices.len(), self.channels, self.window_len], data)?)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.windows[i].label).collect()
    }
}
