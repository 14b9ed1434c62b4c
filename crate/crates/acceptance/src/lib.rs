//! Independent reference implementations and reporting helpers for the
//! acceptance gate. Nothing here calls into the code paths being checked.

use std::time::{Duration, Instant};

use tiws::forest::{c_factor, Node};

/// Average precision by rescanning all samples at every distinct score.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let (mut tp, mut flagged) = (0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                flagged += 1.0;
                if *l {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        ap += (tp / flagged) * (recall - prev_recall);
        prev_recall = recall;
    }
    ap
}

/// Path length by plain recursion over the node array.
pub fn recursive_path_length(nodes: &[Node], i: usize, x: &[f64]) -> f64 {
    match nodes[i] {
        Node::Leaf { size } => c_factor(size as usize),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let next = if x[feature] < threshold { left } else { right };
            1.0 + recursive_path_length(nodes, next as usize, x)
        }
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Outcome of one criterion.
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs a check, enforcing its time budget, and prints one line for it.
pub fn report(
    id: u32,
    name: &str,
    budget: Option<Duration>,
    check: impl FnOnce() -> Verdict,
) -> bool {
    let start = Instant::now();
    let mut v = check();
    let elapsed = start.elapsed();
    if let Some(budget) = budget {
        if elapsed > budget {
            v.pass = false;
            v.detail += &format!("; over budget {:.0?}", budget);
        }
    }
    println!(
        "{} [{id}] {name}: {} ({:.2}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    v.pass
}
