//! Quadratic-time reference searches. Slow, obviously correct, and ordered
//! exactly like the tree-backed versions.

use std::cmp::Ordering;

use super::kdtree::{closer, dist2};
use super::NeighborIndex;

fn ranked(q: &[f64; 3], source: &[[f64; 3]]) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = source.iter().enumerate().map(|(i, s)| (dist2(q, s), i)).collect();
    all.sort_by(|a, b| {
        if closer(*a, *b) {
            Ordering::Less
        } else if closer(*b, *a) {
            Ordering::Greater
        } else {
            Ordering::Equal
        }
    });
    all
}

/// The `k` nearest sources for every query by exhaustive scan.
pub fn knn_brute(query: &[[f64; 3]], source: &[[f64; 3]], k: usize) -> NeighborIndex {
    let lists = query
        .iter()
        .map(|q| {
            let mut all = ranked(q, source);
            all.truncate(k);
            all
        })
        .collect();
    NeighborIndex::from_sorted_lists(lists)
}

/// Every source within `r` (nearest `cap` kept), never empty.
pub fn radius_brute(query: &[[f64; 3]], source: &[[f64; 3]], r: f64, cap: usize) -> NeighborIndex {
    let lists = query
        .iter()
        .map(|q| {
            let all = ranked(q, source);
            let mut within: Vec<(f64, usize)> =
                all.iter().copied().filter(|(d2, _)| d2.sqrt() <= r).take(cap).collect();
            if within.is_empty() {
                within.push(all[0]);
            }
            within
        })
        .collect();
    NeighborIndex::from_sorted_lists(lists)
}
