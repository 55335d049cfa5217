//! Case selection and arm assignment for one session.
//!
//! Cases are stratified by score quintile: each consecutive block draws its
//! cases round-robin from the five quintiles, and a block is repaired if it
//! would otherwise sit entirely on one side of the decision threshold.

use rand::seq::SliceRandom;
use shapval_core::review::{blocked_arms, Arm};
use shapval_core::rng;

pub const QUINTILES: usize = 5;
pub const BLOCK: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub case_id: usize,
    pub arm: Arm,
}

/// Pool rows sorted by score, in five near-equal contiguous groups.
pub fn quintiles(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let n = order.len();
    (0..QUINTILES).map(|q| order[q * n / QUINTILES..(q + 1) * n / QUINTILES].to_vec()).collect()
}

struct Queue {
    items: Vec<usize>,
    pos: usize,
    round: u64,
}

fn select_cases(scores: &[f64], threshold: f64, seed: u64, n_cases: usize) -> Vec<usize> {
    let groups = quintiles(scores);
    let mut queues: Vec<Queue> = groups
        .iter()
        .map(|g| Queue { items: g.clone(), pos: g.len(), round: 0 })
        .collect();
    let mut draw = |q: usize| -> Option<usize> {
        let queue = &mut queues[q];
        if queue.items.is_empty() {
            return None;
        }
        if queue.pos == queue.items.len() {
            queue.items.shuffle(&mut rng::stream(seed, "quintile", &[q as u64, queue.round]));
            queue.round += 1;
            queue.pos = 0;
        }
        queue.pos += 1;
        Some(queue.items[queue.pos - 1])
    };
    let mut out = Vec::with_capacity(n_cases);
    let mut block = 0usize;
    while out.len() < n_cases {
        let len = BLOCK.min(n_cases - out.len());
        let mut picked = Vec::with_capacity(len);
        let mut k = 0;
        while picked.len() < len {
            if let Some(c) = draw((block + k) % QUINTILES) {
                picked.push(c);
            }
            k += 1;
            if k > len * QUINTILES + QUINTILES {
                break;
            }
        }
        repair_sides(&mut picked, scores, threshold, &groups);
        out.extend(picked);
        block += 1;
    }
    out
}

/// Swap the last pick for the in-quintile case nearest the threshold on the
/// missing side, when both sides exist in the pool.
fn repair_sides(block: &mut [usize], scores: &[f64], threshold: f64, groups: &[Vec<usize>]) {
    if block.len() < 2 {
        return;
    }
    let above = block.iter().filter(|&&c| scores[c] >= threshold).count();
    if above != 0 && above != block.len() {
        return;
    }
    let want_above = above == 0;
    let candidate = groups
        .iter()
        .flatten()
        .filter(|&&c| (scores[c] >= threshold) == want_above && !block.contains(&c))
        .min_by(|&&a, &&b| (scores[a] - threshold).abs().total_cmp(&(scores[b] - threshold).abs()).then(a.cmp(&b)));
    if let Some(&c) = candidate {
        let last = block.len() - 1;
        block[last] = c;
    }
}

/// The full case and arm schedule of a session.
pub fn schedule(scores: &[f64], threshold: f64, seed: u64, n_cases: usize) -> Vec<Slot> {
    let cases = select_cases(scores, threshold, rng::derive_seed(seed, "cases", &[]), n_cases);
    let arms = blocked_arms(rng::derive_seed(seed, "arms", &[]), n_cases);
    cases.into_iter().zip(arms).map(|(case_id, arm)| Slot { case_id, arm }).collect()
}
