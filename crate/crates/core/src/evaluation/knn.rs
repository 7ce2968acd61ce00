//! Distance-to-ideal, nearest-neighbor classification and retrieval.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// L1 distance between accuracy vectors.
pub fn distance_to_ideal(accuracies: &[f64], ideal: &[f64]) -> Result<f64> {
    if accuracies.len() != ideal.len() {
        return Err(Error::shape("distance_to_ideal", &[accuracies.len()], &[ideal.len()]));
    }
    if let Some(v) = accuracies.iter().chain(ideal).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("distance_to_ideal", format!("accuracy {v} outside [0, 1]")));
    }
    Ok(accuracies.iter().zip(ideal).map(|(a, b)| (a - b).abs()).sum())
}

fn sq_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum()
}

/// Gallery indices by ascending Euclidean distance to `query`; equal
/// distances keep index order.
fn ranked(query: &[f32], gallery: &[Vec<f32>]) -> Vec<usize> {
    let d: Vec<f64> = gallery.iter().map(|g| sq_distance(query, g)).collect();
    let mut idx: Vec<usize> = (0..gallery.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    idx
}

/// The `k` gallery items nearest to `query`.
pub fn retrieve(query: &[f32], gallery: &[Vec<f32>], k: usize) -> Result<Vec<usize>> {
    if k > gallery.len() {
        return Err(Error::invalid(
            "retrieve",
            format!("k = {k} exceeds gallery size {}", gallery.len()),
        ));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut r = ranked(query, gallery);
    r.truncate(k);
    Ok(r)
}

/// Majority vote among the `n` nearest gallery items. When several labels
/// tie on votes, the label of the nearest neighbor among them wins.
pub fn knn_classify(queries: &[Vec<f32>], gallery: &[Vec<f32>], gallery_labels: &[i32], n: usize) -> Result<Vec<i32>> {
    if gallery.is_empty() {
        return Err(Error::invalid("knn_classify", "empty gallery"));
    }
    if gallery.len() != gallery_labels.len() {
        return Err(Error::shape("knn_classify", &[gallery.len()], &[gallery_labels.len()]));
    }
    if n == 0 || n > gallery.len() {
        return Err(Error::invalid(
            "knn_classify",
            format!("N = {n} must be in 1..={}", gallery.len()),
        ));
    }
    Ok(queries
        .iter()
        .map(|q| {
            let nearest = &ranked(q, gallery)[..n];
            let mut votes: BTreeMap<i32, usize> = BTreeMap::new();
            for &i in nearest {
                *votes.entry(gallery_labels[i]).or_default() += 1;
            }
            let top = *votes.values().max().expect("n >= 1");
            // first neighbor (in distance order) whose label has the top vote
            nearest
                .iter()
                .map(|&i| gallery_labels[i])
                .find(|l| votes[l] == top)
                .expect("some label has the top vote")
        })
        .collect())
}
