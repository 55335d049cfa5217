//! Stratified train / validation / test splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{rng, Error, Result};

const SPLIT_FRACTION: f64 = 0.1;
const SPLIT_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Largest-remainder allocation of `total` slots proportionally to `counts`.
fn allocate(total: usize, counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let exact: Vec<f64> = counts.iter().map(|&c| total as f64 * c as f64 / n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if rem == 0 {
            break;
        }
        out[k] += 1;
        rem -= 1;
    }
    out
}

/// Validation and test each get `min(floor(0.1 n), 200)` rows, stratified by
/// label; the rest is training data. Deterministic given `seed`.
pub fn stratified_split(ds: &Dataset, seed: u64) -> Result<SplitSpec> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[usize::from(y.min(1))].push(i);
    }
    if by_class.iter().any(|c| c.len() < 2) {
        return Err(Error::Degenerate("stratified split needs >= 2 instances of each class".into()));
    }
    let n = ds.len();
    let size = ((n as f64 * SPLIT_FRACTION).floor() as usize).min(SPLIT_CAP);
    let counts = [by_class[0].len(), by_class[1].len()];
    let mut per_class = allocate(size, &counts);
    let fits = per_class.iter().zip(&counts).all(|(&k, &c)| k >= 1 && 2 * k < c);
    if !fits {
        log::warn!("dataset of {n} rows too small for split caps; using proportional fallback");
        per_class = counts.iter().map(|&c| (c / 3).max(1).min((c - 1) / 2)).collect();
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (class, idx) in by_class.iter().enumerate() {
        let mut idx = idx.clone();
        idx.shuffle(&mut rng::stream(seed, "split", &[class as u64]));
        let k = per_class[class];
        validation.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..2 * k]);
        train.extend_from_slice(&idx[2 * k..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        validation,
        test,
        seed,
    })
}
