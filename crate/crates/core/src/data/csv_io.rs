use std::path::Path;

use super::{DataError, RawRecording, Result};

/// Ingestion parameters for `user_id,timestamp,ch_1..ch_C,label` files.
/// Timestamps are in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsvSchema {
    pub n_classes: usize,
    pub rate_hz: f64,
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    let n = fields.len();
    if n < 4 || fields[0] != "user_id" || fields[1] != "timestamp" || fields[n - 1] != "label" {
        return Err(DataError::MalformedHeader(format!(
            "expected user_id,timestamp,ch_1..ch_C,label, got {}",
            fields.join(",")
        )));
    }
    for (i, f) in fields[2..n - 1].iter().enumerate() {
        if *f != format!("ch_{}", i + 1) {
            return Err(DataError::MalformedHeader(format!("column {} should be ch_{}, got {f}", i + 3, i + 1)));
        }
    }
    Ok(n - 3)
}

struct Pending {
    user: String,
    last_time: f64,
    channels: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
}

impl Pending {
    fn new(user: String, time: f64, n_channels: usize) -> Self {
        Self {
            user,
            last_time: time,
            channels: vec![Vec::new(); n_channels],
            labels: Vec::new(),
        }
    }

    fn finish(self, rate_hz: f64) -> Result<RawRecording> {
        RawRecording::new(self.user, self.channels, self.labels, rate_hz)
    }
}

/// Reads one recording per user; a timestamp gap above twice the nominal
/// period starts a new recording for the same user.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RawRecording>> {
    if !(schema.rate_hz > 0.0) {
        return Err(DataError::InvalidParameter(format!("sampling rate {} must be positive", schema.rate_hz)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.display().to_string(),
                source,
            },
            other => DataError::MalformedHeader(format!("{other:?}")),
        })?;
    let n_channels = check_header(reader.headers()?)?;
    let max_gap = 2.0 / schema.rate_hz;
    let mut out = Vec::new();
    let mut current: Option<Pending> = None;

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Row numbers are 1-based and count the header.
        let row = i + 2;
        let malformed = |detail: String| DataError::MalformedRow { row, detail };
        if record.len() != n_channels + 3 {
            return Err(malformed(format!("expected {} fields, got {}", n_channels + 3, record.len())));
        }
        let user = record[0].trim().to_string();
        let time: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad timestamp {:?}", &record[1])))?;
        let label: i64 = record[n_channels + 2]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad label {:?}", &record[n_channels + 2])))?;
        let label = match label {
            -1 => None,
            k if k >= 0 && (k as usize) < schema.n_classes => Some(k as usize),
            class => {
                return Err(DataError::UnknownClass {
                    row,
                    class,
                    n_classes: schema.n_classes,
                })
            }
        };

        match current.as_mut() {
            Some(p) if p.user == user => {
                if time < p.last_time {
                    return Err(DataError::NonMonotonicTimestamp { user, row });
                }
                if time - p.last_time > max_gap {
                    let done = current.replace(Pending::new(user.clone(), time, n_channels));
                    out.push(done.expect("current is set").finish(schema.rate_hz)?);
                }
            }
            _ => {
                if let Some(done) = current.replace(Pending::new(user.clone(), time, n_channels)) {
                    out.push(done.finish(schema.rate_hz)?);
                }
            }
        }
        let p = current.as_mut().expect("current is set");
        p.last_time = time;
        for c in 0..n_channels {
            let field = record[c + 2].trim();
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field
                    .parse()
                    .map_err(|_| malformed(format!("bad value {field:?} in ch_{}", c + 1)))?
            };
            p.channels[c].push(v);
        }
        p.labels.push(label);
    }
    if let Some(done) = current {
        out.push(done.finish(schema.rate_hz)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::clean_and_interpolate;
    use std::io::Write;

    const SCHEMA: CsvSchema = CsvSchema { n_classes: 3, rate_hz: 10.0 };

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn groups_by_user() {
        let f = write("user_id,timestamp,ch_1,ch_2,label\na,0.0,1,2,0\na,0.1,1,2,1\nb,0.0,3,4,-1\nb,0.1,3,4,2\n");
        let recs = load_csv(f.path(), &SCHEMA).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].user, "a");
        assert_eq!(recs[1].labels, vec![None, Some(2)]);
        assert_eq!(recs[1].channels, vec![vec![3.0, 3.0], vec![4.0, 4.0]]);
    }

    #[test]
    fn gap_of_three_periods_splits() {
        let f = write("user_id,timestamp,ch_1,label\na,0.0,1,0\na,0.1,1,0\na,0.4,1,0\na,0.5,1,0\n");
        let recs = load_csv(f.path(), &SCHEMA).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].len(), recs[1].len()), (2, 2));
    }

    #[test]
    fn empty_field_is_missing_then_interpolated() {
        let f = write("user_id,timestamp,ch_1,label\na,0.0,1,0\na,0.1,,0\na,0.2,3,0\n");
        let recs = load_csv(f.path(), &SCHEMA).unwrap();
        assert!(recs[0].channels[0][1].is_nan());
        assert_eq!(clean_and_interpolate(&recs[0]).unwrap().channels[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn errors() {
        let bad_header = write("user,timestamp,ch_1,label\na,0,1,0\n");
        assert!(matches!(load_csv(bad_header.path(), &SCHEMA), Err(DataError::MalformedHeader(_))));
        let backwards = write("user_id,timestamp,ch_1,label\na,0.1,1,0\na,0.0,1,0\n");
        assert!(matches!(
            load_csv(backwards.path(), &SCHEMA),
            Err(DataError::NonMonotonicTimestamp { row: 3, .. })
        ));
        let unknown = write("user_id,timestamp,ch_1,label\na,0.0,1,3\n");
        assert!(matches!(load_csv(unknown.path(), &SCHEMA), Err(DataError::UnknownClass { class: 3, .. })));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), &SCHEMA),
            Err(DataError::Io { .. })
        ));
    }
}
