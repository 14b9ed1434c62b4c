//! Reference implementations used only by tests. They share no code with
//! the library paths they check.
#![allow(dead_code)]

use tiws::forest::{c_factor, Node};

/// Average precision by rescanning all samples at every distinct score.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = Vec::new();
    for &s in scores {
        if !thresholds.contains(&s) {
            thresholds.push(s);
        }
    }
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0.0;
        let mut flagged = 0.0;
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
pub fn recursive_path_length(nodes: &[Node], x: &[f64]) -> f64 {
    fn go(nodes: &[Node], i: usize, x: &[f64], depth: f64) -> f64 {
        match nodes[i] {
            Node::Leaf { size } => depth + c_factor(size as usize),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[feature] < threshold {
                    go(nodes, left as usize, x, depth + 1.0)
                } else {
                    go(nodes, right as usize, x, depth + 1.0)
                }
            }
        }
    }
    go(nodes, 0, x, 0.0)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
