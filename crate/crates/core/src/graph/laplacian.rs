//! Dense graph utilities on row-major `n × n` matrices.

use crate::error::{Error, Result};

/// `A_ij = exp(−‖x_i − x_j‖ / σ²)` with the unsquared Euclidean distance.
pub fn rbf_adjacency(vectors: &[Vec<f64>], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("rbf sigma must be > 0, got {sigma}")));
    }
    let n = vectors.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if vectors[i].len() != vectors[j].len() {
                return Err(Error::shape("rbf_adjacency", "vectors differ in length"));
            }
            let d = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            a[i * n + j] = (-d / (sigma * sigma)).exp();
        }
    }
    Ok(a)
}

fn order(a: &[f64]) -> Result<usize> {
    let n = (a.len() as f64).sqrt().round() as usize;
    if n * n != a.len() {
        return Err(Error::shape("laplacian", format!("{} entries is not a square matrix", a.len())));
    }
    Ok(n)
}

/// `L = D − A`.
pub fn laplacian(a: &[f64]) -> Result<Vec<f64>> {
    let n = order(a)?;
    let mut l: Vec<f64> = a.iter().map(|v| -v).collect();
    for i in 0..n {
        l[i * n + i] += a[i * n..(i + 1) * n].iter().sum::<f64>();
    }
    Ok(l)
}

/// `I − D^{−1/2} A D^{−1/2}`; zero-degree nodes get 0 in `D^{−1/2}`.
pub fn normalized_laplacian(a: &[f64]) -> Result<Vec<f64>> {
    let n = order(a)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            l[i * n + j] = delta - inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
        }
    }
    Ok(l)
}
