use std::fs;
use std::path::Path;

use super::{DataError, NormalizationStats, Result, Window, WindowSet};
use crate::Domain;

pub const CACHE_SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "dataset.manifest";
const PAYLOAD: &str = "dataset.bin";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes `dataset.manifest` (text) and `dataset.bin` (little-endian f32,
/// windows in manifest order) into `dir`.
pub fn write_cache(dir: &Path, set: &WindowSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = format!(
        "schema_version {CACHE_SCHEMA_VERSION}\npreset {}\nchannels {}\nwindow_len {}\nn_classes {}\ncount {}\n",
        set.preset,
        set.channels,
        set.window_len,
        set.n_classes,
        set.len()
    );
    if let Some(stats) = &set.stats {
        manifest += &format!("stats_min {}\nstats_max {}\n", join(&stats.min), join(&stats.max));
    }
    manifest += "windows\n";
    let per = set.channels * set.window_len;
    let mut payload = Vec::with_capacity(set.len() * per * 4);
    for w in &set.windows {
        if w.data.len() != per {
            return Err(DataError::Cache(format!("window has {} values, expected {per}", w.data.len())));
        }
        if w.user.contains(['\t', '\n', '\r']) {
            return Err(DataError::Cache(format!("user id {:?} contains a tab or newline", w.user)));
        }
        let domain = match w.domain {
            Domain::Source => "source",
            Domain::Target => "target",
        };
        manifest += &format!("{}\t{domain}\t{}\n", w.label, w.user);
        for v in &w.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(io_err(&mpath))?;
    let ppath = dir.join(PAYLOAD);
    fs::write(&ppath, payload).map_err(io_err(&ppath))?;
    Ok(())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| DataError::Cache(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split_whitespace().map(|v| parse(key, v)).collect()
}

/// Reads a cache written by [`write_cache`].
pub fn read_cache(dir: &Path) -> Result<WindowSet> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let mut lines = text.lines();
    let mut header = std::collections::HashMap::new();
    for line in lines.by_ref() {
        if line == "windows" {
            break;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| DataError::Cache(format!("malformed manifest line {line:?}")))?;
        header.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| {
        header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DataError::Cache(format!("manifest lacks {key}")))
    };
    let version: u32 = parse("schema_version", get("schema_version")?)?;
    if version != CACHE_SCHEMA_VERSION {
        return Err(DataError::Cache(format!(
            "schema version {version}, this build reads {CACHE_SCHEMA_VERSION}"
        )));
    }
    let channels: usize = parse("channels", get("channels")?)?;
    let window_len: usize = parse("window_len", get("window_len")?)?;
    let n_classes: usize = parse("n_classes", get("n_classes")?)?;
    let count: usize = parse("count", get("count")?)?;
    let stats = match (header.get("stats_min"), header.get("stats_max")) {
        (Some(lo), Some(hi)) => Some(NormalizationStats {
            min: parse_list("stats_min", lo)?,
            max: parse_list("stats_max", hi)?,
        }),
        _ => None,
    };

    let ppath = dir.join(PAYLOAD);
    let bytes = fs::read(&ppath).map_err(io_err(&ppath))?;
    let per = channels * window_len;
    if bytes.len() != count * per * 4 {
        return Err(DataError::Cache(format!(
            "payload has {} bytes, manifest declares {count} windows of {per} floats",
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut windows = Vec::with_capacity(count);
    for line in lines {
        let mut parts = line.splitn(3, '\t');
        let (Some(label), Some(domain), Some(user)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DataError::Cache(format!("malformed window line {line:?}")));
        };
        let domain = match domain {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => return Err(DataError::Cache(format!("unknown domain {other:?}"))),
        };
        windows.push(Window {
            data: values.by_ref().take(per).collect(),
            label: parse("label", label)?,
            user: user.to_string(),
            domain,
        });
    }
    if windows.len() != count {
        return Err(DataError::Cache(format!("manifest lists {} windows, declares {count}", windows.len())));
    }
    Ok(WindowSet {
        channels,
        window_len,
        n_classes,
        preset: get("preset")?.to_string(),
        stats,
        windows,
    })
}
