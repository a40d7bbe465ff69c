use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

/// Index lists into the source and target window lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub source_train: Vec<usize>,
    pub source_val: Vec<usize>,
    pub target_adapt: Vec<usize>,
    pub target_test: Vec<usize>,
    pub seed: u64,
}

/// Seeded permutations: source split at `floor(0.8 n_S)`, target split at
/// `ceil(0.5 n_T)` (adaptation first).
pub fn make_splits(n_source: usize, n_target: usize, seed: u64) -> Result<SplitPlan> {
    if n_source < 2 || n_target < 2 {
        return Err(DataError::InvalidParameter(format!(
            "need at least 2 windows per domain, got {n_source} source and {n_target} target"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src: Vec<usize> = (0..n_source).collect();
    src.shuffle(&mut rng);
    let mut tgt: Vec<usize> = (0..n_target).collect();
    tgt.shuffle(&mut rng);
    let cut_s = n_source * 4 / 5;
    let cut_t = n_target.div_ceil(2);
    let source_val = src.split_off(cut_s);
    let target_test = tgt.split_off(cut_t);
    Ok(SplitPlan {
        source_train: src,
        source_val,
        target_adapt: tgt,
        target_test,
        seed,
    })
}

/// Keeps transition classes only in the target adaptation split.
pub fn apply_transition_protocol(
    plan: &SplitPlan,
    source_labels: &[usize],
    target_labels: &[usize],
    transition_classes: &[usize],
) -> SplitPlan {
    let keep = |labels: &[usize], idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .copied()
            .filter(|&i| !transition_classes.contains(&labels[i]))
            .collect()
    };
    SplitPlan {
        source_train: keep(source_labels, &plan.source_train),
        source_val: keep(source_labels, &plan.source_val),
        target_adapt: plan.target_adapt.clone(),
        target_test: keep(target_labels, &plan.target_test),
        seed: plan.seed,
    }
}
