use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, NormalizationStats, Result, Window, WindowSet};
use crate::Domain;

/// Parameters of the synthetic cross-user task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub source_users: usize,
    pub target_users: usize,
    pub windows_per_user: usize,
    pub channels: usize,
    pub window_len: usize,
    /// Cycles per window for each class.
    pub base_freqs: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub scale_range: (f64, f64),
    pub offset_range: (f64, f64),
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Fraction of target windows replaced by two-class mixtures.
    pub corruption: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            source_users: 4,
            target_users: 1,
            windows_per_user: 150,
            channels: 3,
            window_len: 32,
            base_freqs: vec![1.0, 2.0, 3.0],
            amplitudes: vec![1.0, 0.8, 0.6],
            scale_range: (0.7, 1.3),
            offset_range: (-0.3, 0.3),
            noise: 0.3,
            corruption: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidParameter(m));
        if self.n_classes < 2 {
            return bad("synthetic tasks need at least 2 classes".into());
        }
        if self.base_freqs.len() != self.n_classes || self.amplitudes.len() != self.n_classes {
            return bad(format!("need {} base frequencies and amplitudes", self.n_classes));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return bad(format!("corruption fraction {} outside [0, 1]", self.corruption));
        }
        if self.channels == 0 || self.window_len < 2 || self.windows_per_user == 0 {
            return bad("channels, window_len (>= 2) and windows_per_user must be positive".into());
        }
        if self.source_users == 0 || self.target_users == 0 {
            return bad("need at least one source and one target user".into());
        }
        if self.scale_range.0 > self.scale_range.1 || self.offset_range.0 > self.offset_range.1 || self.noise < 0.0 {
            return bad("distortion ranges must be ordered and noise non-negative".into());
        }
        Ok(())
    }

    pub fn user_name(domain: Domain, index: usize) -> String {
        match domain {
            Domain::Source => format!("s{index}"),
            Domain::Target => format!("t{index}"),
        }
    }
}

struct UserDistortion {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

fn clean_signal(spec: &SyntheticSpec, class: usize, channel: usize, t: usize) -> f64 {
    let phase = 2.0 * PI * channel as f64 / (spec.channels as f64 + 1.0);
    let x = 2.0 * PI * spec.base_freqs[class] * t as f64 / spec.window_len as f64 + phase;
    spec.amplitudes[class] * x.sin()
}

fn render(
    spec: &SyntheticSpec,
    classes: (usize, usize),
    user: &UserDistortion,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let half = spec.window_len / 2;
    let mut out = Vec::with_capacity(spec.channels * spec.window_len);
    for c in 0..spec.channels {
        for t in 0..spec.window_len {
            let class = if t < half { classes.0 } else { classes.1 };
            let v = clean_signal(spec, class, c, t) + noise.sample(rng);
            out.push(user.scale[c] * v + user.offset[c]);
        }
    }
    out
}

/// Deterministic synthetic windows, normalized per channel over all users.
/// Source users are `s0, s1, ...`, target users `t0, t1, ...`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<WindowSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    let mut raw: Vec<(Vec<f64>, usize, String, Domain)> = Vec::new();
    let roles = [(Domain::Source, spec.source_users), (Domain::Target, spec.target_users)];
    for (domain, users) in roles {
        for u in 0..users {
            let sample_range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let distortion = UserDistortion {
                scale: (0..spec.channels).map(|_| sample_range(&mut rng, spec.scale_range)).collect(),
                offset: (0..spec.channels).map(|_| sample_range(&mut rng, spec.offset_range)).collect(),
            };
            let name = SyntheticSpec::user_name(domain, u);
            let mut user_windows: Vec<(Vec<f64>, usize)> = (0..spec.windows_per_user)
                .map(|j| {
                    let class = j % spec.n_classes;
                    (render(spec, (class, class), &distortion, &noise, &mut rng), class)
                })
                .collect();
            if domain == Domain::Target {
                let count = (spec.corruption * spec.windows_per_user as f64).round() as usize;
                for idx in sample(&mut rng, spec.windows_per_user, count).into_vec() {
                    let first = user_windows[idx].1;
                    let second = (first + rng.gen_range(1..spec.n_classes)) % spec.n_classes;
                    user_windows[idx].0 = render(spec, (first, second), &distortion, &noise, &mut rng);
                }
            }
            raw.extend(user_windows.into_iter().map(|(d, l)| (d, l, name.clone(), domain)));
        }
    }

    let mut stats = NormalizationStats {
        min: vec![f64::INFINITY; spec.channels],
        max: vec![f64::NEG_INFINITY; spec.channels],
    };
    for (data, ..) in &raw {
        for (c, row) in data.chunks(spec.window_len).enumerate() {
            for &v in row {
                stats.min[c] = stats.min[c].min(v);
                stats.max[c] = stats.max[c].max(v);
            }
        }
    }
    let windows = raw
        .into_iter()
        .map(|(data, label, user, domain)| Window {
            data: data
                .chunks(spec.window_len)
                .enumerate()
                .flat_map(|(c, row)| row.iter().map(move |&v| (c, v)))
                .map(|(c, v)| stats.apply_value(c, v) as f32)
                .collect(),
            label,
            user,
            domain,
        })
        .collect();
    Ok(WindowSet {
        channels: spec.channels,
        window_len: spec.window_len,
        n_classes: spec.n_classes,
        preset: "synthetic".to_string(),
        stats: Some(stats),
        windows,
    })
}
