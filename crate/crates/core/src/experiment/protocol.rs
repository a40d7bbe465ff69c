use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Protocol};
use super::dataset::LoadedData;
use super::run::{append_results, run_single, ResultRow};
use super::{ExperimentError, Result};
use crate::evaluation::{mean_std, paired_t_test, TTestResult};
use crate::training::Method;

/// Mean ± std of one method's rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<MethodSummary> {
    let mut by_method: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    by_method
        .into_values()
        .map(|rs| {
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let f1: Vec<f64> = rs.iter().map(|r| r.macro_f1).collect();
            let (am, asd) = mean_std(&acc).expect("non-empty group");
            let (fm, fsd) = mean_std(&f1).expect("non-empty group");
            MethodSummary {
                method: rs[0].method,
                runs: rs.len(),
                accuracy_mean: am,
                accuracy_std: asd,
                macro_f1_mean: fm,
                macro_f1_std: fsd,
            }
        })
        .collect()
}

/// Paired tests of method `a` against `b` over matching (user, seed) runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Method,
    pub b: Method,
    pub pairs: usize,
    pub accuracy: TTestResult,
    pub macro_f1: TTestResult,
}

pub fn compare_methods(rows: &[ResultRow], a: Method, b: Method) -> Result<Comparison> {
    let key = |r: &ResultRow| (r.new_user.clone(), r.seed);
    let other: BTreeMap<_, &ResultRow> = rows.iter().filter(|r| r.method == b).map(|r| (key(r), r)).collect();
    let pairs: Vec<(&ResultRow, &ResultRow)> = rows
        .iter()
        .filter(|r| r.method == a)
        .filter_map(|r| other.get(&key(r)).map(|o| (r, *o)))
        .collect();
    let col = |f: fn(&ResultRow) -> f64, first: bool| -> Vec<f64> {
        pairs.iter().map(|(x, y)| if first { f(x) } else { f(y) }).collect()
    };
    Ok(Comparison {
        a,
        b,
        pairs: pairs.len(),
        accuracy: paired_t_test(&col(|r| r.accuracy, true), &col(|r| r.accuracy, false))?,
        macro_f1: paired_t_test(&col(|r| r.macro_f1, true), &col(|r| r.macro_f1, false))?,
    })
}

/// Users that take the new-user role under the config's protocol.
pub fn protocol_users(config: &ExperimentConfig, data: &LoadedData) -> Vec<String> {
    match config.protocol {
        Protocol::FixedNewUserSet => config.new_users.clone(),
        Protocol::LeaveOneUserOut if config.new_users.is_empty() => data.users(),
        Protocol::LeaveOneUserOut => config.new_users.clone(),
    }
}

pub fn results_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(format!("results-{}.csv", config.method.as_str()))
}

/// Outcome of a full protocol.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<MethodSummary>,
    pub results_csv: PathBuf,
}

fn partial_marker(dir: &Path) -> PathBuf {
    dir.join("PARTIAL")
}

/// Runs every (new user, seed) pair on up to `threads` workers and writes
/// the results CSV in (user, seed) order. A failed run leaves a `PARTIAL`
/// marker next to the rows that did complete.
pub fn run_protocol(config: &ExperimentConfig, data: &LoadedData, threads: usize) -> Result<ProtocolOutcome> {
    config.validate()?;
    let users = protocol_users(config, data);
    if users.is_empty() {
        return Err(ExperimentError::Config("protocol has no new users".into()));
    }
    let known = data.users();
    if let Some(u) = users.iter().find(|u| !known.contains(u)) {
        return Err(ExperimentError::UnknownUser(u.clone()));
    }
    let jobs: Vec<(String, u64)> = users
        .iter()
        .flat_map(|u| config.seeds.iter().map(move |&s| (u.clone(), s)))
        .collect();
    let slots: Vec<Mutex<Option<Result<ResultRow>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((user, seed)) = jobs.get(i) else { break };
                let res = run_single(config, data, user, *seed).map(|o| o.row);
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });

    let path = results_path(config);
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| ExperimentError::Io(format!("{}: {e}", config.output_dir.display())))?;
    if path.exists() {
        fs::remove_file(&path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    }
    let mut rows = Vec::new();
    let mut first_error = None;
    for (slot, (user, seed)) in slots.into_iter().zip(&jobs) {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(row)) => rows.push(row),
            Some(Err(e)) => {
                first_error.get_or_insert((format!("{user}/seed-{seed}"), e));
            }
            None => unreachable!("every job ran"),
        }
    }
    append_results(&path, &rows)?;
    let marker = partial_marker(&config.output_dir);
    if let Some((run, error)) = first_error {
        let note = format!("{} of {} runs completed; {run} failed: {error}\n", rows.len(), jobs.len());
        fs::write(&marker, note).map_err(|e| ExperimentError::Io(format!("{}: {e}", marker.display())))?;
        return Err(ExperimentError::PartialResults {
            completed: rows.len(),
            total: jobs.len(),
            source: Box::new(error),
        });
    }
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| ExperimentError::Io(format!("{}: {e}", marker.display())))?;
    }
    Ok(ProtocolOutcome {
        summary: summarize(&rows),
        rows,
        results_csv: path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, user: &str, seed: u64, acc: f64) -> ResultRow {
        ResultRow {
            method,
            new_user: user.into(),
            seed,
            accuracy: acc,
            macro_f1: acc / 2.0,
            a_distance: None,
            runtime_seconds: 0.0,
        }
    }

    #[test]
    fn identical_rows_have_zero_spread() {
        let rows = vec![row(Method::Dann, "a", 1, 0.8), row(Method::Dann, "b", 2, 0.8)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].runs, s[0].accuracy_mean, s[0].accuracy_std), (2, 0.8, 0.0));
    }

    #[test]
    fn comparison_pairs_by_user_and_seed() {
        let rows = vec![
            row(Method::SwlAdapt, "a", 1, 0.9),
            row(Method::SwlAdapt, "a", 2, 0.7),
            row(Method::Dann, "a", 2, 0.6),
            row(Method::Dann, "a", 1, 0.8),
        ];
        let c = compare_methods(&rows, Method::SwlAdapt, Method::Dann).unwrap();
        assert_eq!(c.pairs, 2);
        // Differences are a constant 0.1 up to rounding.
        assert!(c.accuracy.p < 1e-6);
    }
}
