//! Spectral angle, abundance RMSE and endmember permutation matching.

use crate::error::{Error, Result};
use crate::hsi::EndmemberMatrix;

/// Largest endmember count accepted by [`match_endmembers`].
pub const MAX_MATCH_ENDMEMBERS: usize = 6;

/// Spectral angle distance in radians: `arccos` of the clamped cosine similarity.
pub fn sad(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape("sad", format!("lengths {} and {}", estimate.len(), reference.len())));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(a, b)| a * b).sum();
    let na2: f64 = estimate.iter().map(|v| v * v).sum();
    let nb2: f64 = reference.iter().map(|v| v * v).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::InvalidArgument("spectral angle of a zero vector is undefined".into()));
    }
    // sqrt of the product keeps identical inputs at exactly zero.
    Ok((dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0).acos())
}

/// Root mean squared difference between two maps of equal size.
pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::shape("rmse", format!("maps of {} and {} pixels", truth.len(), estimate.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty maps".into()));
    }
    let sq: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sq / truth.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationMatch {
    /// `assignment[j]` is the ground-truth index matched to estimated endmember `j`.
    pub assignment: Vec<usize>,
    /// Mean SAD over matched pairs.
    pub cost: f64,
}

impl PermutationMatch {
    /// Inverse of `assignment`: `order()[k]` is the estimated index matched to
    /// truth `k`, suitable for `reorder`.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.assignment.len()];
        for (j, &k) in self.assignment.iter().enumerate() {
            order[k] = j;
        }
        order
    }
}

/// Exhaustive search over all `P!` assignments for the one minimizing mean SAD.
/// Ties keep the lexicographically first permutation.
pub fn match_endmembers(estimated: &EndmemberMatrix, truth: &EndmemberMatrix) -> Result<PermutationMatch> {
    let p = truth.count();
    if estimated.count() != p || estimated.bands() != truth.bands() {
        return Err(Error::shape(
            "match_endmembers",
            format!("{}x{} estimate vs {}x{} truth", estimated.bands(), estimated.count(), truth.bands(), p),
        ));
    }
    if p > MAX_MATCH_ENDMEMBERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive matching supports at most {MAX_MATCH_ENDMEMBERS} endmembers, got {p}"
        )));
    }
    let est = estimated.columns();
    let tru = truth.columns();
    let mut cost = vec![vec![0.0; p]; p];
    for j in 0..p {
        for k in 0..p {
            cost[j][k] = sad(&est[j], &tru[k])?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..p).collect();
    loop {
        let total: f64 = perm.iter().enumerate().map(|(j, &k)| cost[j][k]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm.clone()));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let (total, assignment) = best.expect("at least one permutation");
    Ok(PermutationMatch {
        assignment,
        cost: total / p as f64,
    })
}

/// Advances to the next lexicographic permutation; false after the last.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
