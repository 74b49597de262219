use super::{EndmemberMatrix, HsiCube};
use crate::error::{Error, Result};

/// Automatic target generation: the largest-norm pixel first, then the pixel
/// with the largest residual norm after projecting out the span of those
/// already picked. Returns the spectra and their pixel indices.
pub fn atgp(cube: &HsiCube, count: usize) -> Result<(EndmemberMatrix, Vec<usize>)> {
    if count == 0 || count > cube.bands() {
        return Err(Error::InvalidArgument(format!(
            "atgp needs 1 ≤ count ≤ bands ({}), got {count}",
            cube.bands()
        )));
    }
    let l = cube.bands();
    let mut residual = cube.data().to_vec();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let (best, norm2) = residual
            .chunks_exact(l)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .enumerate()
            .fold((0, -1.0), |acc, (i, n)| if n > acc.1 { (i, n) } else { acc });
        if !(norm2 > 0.0) {
            return Err(Error::InvalidArgument(format!("atgp found only {} independent pixels", picked.len())));
        }
        picked.push(best);
        let u: Vec<f64> = residual[best * l..(best + 1) * l].iter().map(|v| v / norm2.sqrt()).collect();
        for r in residual.chunks_exact_mut(l) {
            let d: f64 = r.iter().zip(&u).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(&u).for_each(|(a, b)| *a -= d * b);
        }
    }
    let columns: Vec<Vec<f64>> = picked.iter().map(|&i| cube.spectrum_at(i).to_vec()).collect();
    Ok((EndmemberMatrix::from_columns(&columns)?, picked))
}
