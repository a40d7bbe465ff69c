use super::config::DatasetSource;
use super::{ExperimentError, Result};
use crate::data::{
    clean_and_interpolate, generate_synthetic, load_csv, read_cache, segment, CsvSchema, DataError, DatasetPreset,
    NormalizationScope, NormalizationStats, RawRecording, WindowSet,
};
use crate::Domain;

/// Data as loaded once per experiment, before any per-run role assignment.
#[derive(Clone, Debug)]
pub enum LoadedData {
    /// Already windowed and normalized.
    Windows {
        set: WindowSet,
        transition_classes: Vec<usize>,
    },
    /// Cleaned recordings, normalized and windowed per run.
    Recordings {
        recordings: Vec<RawRecording>,
        preset: DatasetPreset,
        n_classes: usize,
        scope: NormalizationScope,
        transition_classes: Vec<usize>,
    },
}

pub fn load_data(source: &DatasetSource) -> Result<LoadedData> {
    match source {
        DatasetSource::Synthetic(spec) => Ok(LoadedData::Windows {
            set: generate_synthetic(spec)?,
            transition_classes: Vec::new(),
        }),
        DatasetSource::Cache { dir, transition_classes } => Ok(LoadedData::Windows {
            set: read_cache(dir)?,
            transition_classes: transition_classes.clone(),
        }),
        DatasetSource::Csv(src) => {
            let preset = DatasetPreset::by_name(&src.preset)
                .ok_or_else(|| ExperimentError::Config(format!("unknown preset `{}`", src.preset)))?;
            let schema = CsvSchema {
                n_classes: src.n_classes,
                rate_hz: preset.rate_hz,
            };
            let recordings = load_csv(&src.path, &schema)?
                .iter()
                .map(clean_and_interpolate)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(LoadedData::Recordings {
                recordings,
                preset,
                n_classes: src.n_classes,
                scope: src.normalization,
                transition_classes: src.transition_classes.clone(),
            })
        }
    }
}

/// Normalizes and windows recordings. With source-only scope the range is
/// fitted on recordings of users other than `target_user`.
pub fn window_recordings(
    recordings: &[RawRecording],
    preset: &DatasetPreset,
    n_classes: usize,
    scope: NormalizationScope,
    target_user: Option<&str>,
) -> Result<WindowSet> {
    let stats = match (scope, target_user) {
        (NormalizationScope::SourceOnly, Some(user)) => {
            NormalizationStats::fit(recordings.iter().filter(|r| r.user != user))?
        }
        _ => NormalizationStats::fit(recordings)?,
    };
    let mut windows = Vec::new();
    for rec in recordings {
        match segment(&stats.apply(rec), preset.window_seconds, preset.overlap) {
            Ok(ws) => windows.extend(ws),
            // Fragments shorter than one window carry no samples.
            Err(DataError::TooShort { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let channels = recordings.first().map_or(0, |r| r.channels.len());
    Ok(WindowSet {
        channels,
        window_len: preset.window_len(),
        n_classes,
        preset: preset.name.clone(),
        stats: Some(stats),
        windows,
    })
}

impl LoadedData {
    pub fn users(&self) -> Vec<String> {
        match self {
            LoadedData::Windows { set, .. } => set.users(),
            LoadedData::Recordings { recordings, .. } => {
                let mut u: Vec<String> = recordings.iter().map(|r| r.user.clone()).collect();
                u.sort();
                u.dedup();
                u
            }
        }
    }

    pub fn transition_classes(&self) -> &[usize] {
        match self {
            LoadedData::Windows { transition_classes, .. } | LoadedData::Recordings { transition_classes, .. } => {
                transition_classes
            }
        }
    }

    /// Windows of one run: `new_user` is the target domain, every other user
    /// not in `excluded` is a source user.
    pub fn windows_for(&self, new_user: &str, excluded: &[String]) -> Result<WindowSet> {
        if !self.users().iter().any(|u| u == new_user) {
            return Err(ExperimentError::UnknownUser(new_user.to_string()));
        }
        let mut set = match self {
            LoadedData::Windows { set, .. } => set.clone(),
            LoadedData::Recordings {
                recordings,
                preset,
                n_classes,
                scope,
                ..
            } => {
                let kept: Vec<RawRecording> = recordings
                    .iter()
                    .filter(|r| r.user == new_user || !excluded.contains(&r.user))
                    .cloned()
                    .collect();
                window_recordings(&kept, preset, *n_classes, *scope, Some(new_user))?
            }
        };
        set.windows.retain(|w| w.user == new_user || !excluded.contains(&w.user));
        for w in &mut set.windows {
            w.domain = if w.user == new_user { Domain::Target } else { Domain::Source };
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    #[test]
    fn roles_follow_the_new_user() {
        let data = load_data(&DatasetSource::Synthetic(SyntheticSpec {
            windows_per_user: 6,
            ..SyntheticSpec::default()
        }))
        .unwrap();
        let set = data.windows_for("s1", &["t0".to_string()]).unwrap();
        assert!(set.windows.iter().all(|w| w.user != "t0"));
        assert!(set.windows.iter().all(|w| (w.user == "s1") == (w.domain == Domain::Target)));
        assert!(matches!(data.windows_for("nobody", &[]), Err(ExperimentError::UnknownUser(_))));
    }

    #[test]
    fn source_only_scope_fits_on_other_users() {
        let rec = |user: &str, scale: f64| {
            let ch: Vec<f64> = (0..300).map(|i| scale * (i as f64 / 10.0).sin()).collect();
            RawRecording::new(user, vec![ch], vec![Some(0); 300], 50.0).unwrap()
        };
        let recs = vec![rec("a", 1.0), rec("b", 3.0)];
        let preset = DatasetPreset::sbhar();
        let global = window_recordings(&recs, &preset, 2, NormalizationScope::Global, Some("b")).unwrap();
        let source = window_recordings(&recs, &preset, 2, NormalizationScope::SourceOnly, Some("b")).unwrap();
        assert!(global.stats.as_ref().unwrap().max[0] > 2.9);
        assert!(source.stats.as_ref().unwrap().max[0] < 1.01);
        assert!(source.windows.iter().flat_map(|w| &w.data).all(|v| (-1.0..=1.0).contains(v)));
    }
}
