//! Hyperspectral cubes, abundance and endmember containers, file formats, and
//! the linear-mixing synthetic scene generator.

mod atgp;
mod export;
mod format;
mod synth;

pub use atgp::atgp;
pub use export::{save_abundance_maps, write_pgm, ABUNDANCE_CSV};
pub use format::{
    load_cube, read_abundance_csv, read_endmember_csv, read_endmember_names, save_cube,
    write_abundance_csv, write_endmember_csv, write_named_endmember_csv, CubeFormat, Precision,
};
pub use synth::{synthesize_scene, SceneSpec};
pub(crate) use format::write_file;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H × W × L` reflectance raster stored band-interleaved-by-pixel, so each
/// pixel's spectrum is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    pub wavelengths: Option<Vec<f64>>,
    /// Set once `normalize` has been applied.
    pub normalization: Option<NormalizeMode>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidArgument(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::shape(
                "HsiCube::new",
                format!("{height}x{width}x{bands} needs {} values, got {}", height * width * bands, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cube contains non-finite reflectance".into()));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
            wavelengths: None,
            normalization: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Spectrum of the pixel with flat index `row * width + col`.
    pub fn spectrum_at(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.bands..(pixel + 1) * self.bands]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    GlobalMax,
    PerBand,
}

/// Scales reflectance into `[0, 1]`. Negative values (possible after
/// additive noise) are clamped to zero.
pub fn normalize(cube: &HsiCube, mode: NormalizeMode) -> Result<HsiCube> {
    let l = cube.bands;
    let scales: Vec<f64> = match mode {
        NormalizeMode::GlobalMax => vec![cube.max(); l],
        NormalizeMode::PerBand => (0..l)
            .map(|b| cube.data.iter().skip(b).step_by(l).copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    };
    if let Some(b) = scales.iter().position(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument(match mode {
            NormalizeMode::GlobalMax => "cannot normalize an all-zero cube".to_string(),
            NormalizeMode::PerBand => format!("band {b} has no positive value"),
        }));
    }
    let data = cube
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| (v / scales[i % l]).clamp(0.0, 1.0))
        .collect();
    Ok(HsiCube {
        data,
        normalization: Some(mode),
        ..cube.clone()
    })
}

/// Per-pixel material fractions, `H × W × P`, pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct AbundanceStack {
    height: usize,
    width: usize,
    count: usize,
    data: Vec<f64>,
}

impl AbundanceStack {
    pub fn new(height: usize, width: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * count {
            return Err(Error::shape(
                "AbundanceStack::new",
                format!("{height}x{width}x{count} needs {} values, got {}", height * width * count, data.len()),
            ));
        }
        Ok(AbundanceStack {
            height,
            width,
            count,
            data,
        })
    }

    pub fn uniform(height: usize, width: usize, count: usize) -> Self {
        AbundanceStack {
            height,
            width,
            count,
            data: vec![1.0 / count as f64; height * width * count],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of endmembers `P`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.count..(index + 1) * self.count]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.count..(index + 1) * self.count]
    }

    /// One abundance map, row-major `H × W`.
    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.count).copied().collect()
    }

    /// New stack whose channel `k` is this stack's channel `order[k]`.
    pub fn reorder(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.count {
            return Err(Error::shape("reorder", format!("{} indices for {} channels", order.len(), self.count)));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks(self.count) {
            data.extend(order.iter().map(|&j| px[j]));
        }
        Ok(AbundanceStack { data, ..*self })
    }

    /// Divides every pixel by its channel sum, floored at 1e-12.
    pub fn renormalize(&mut self) {
        for px in self.data.chunks_mut(self.count) {
            let s = px.iter().sum::<f64>().max(1e-12);
            px.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// Largest `|Σα − 1|` over pixels and smallest entry.
    pub fn constraint_violation(&self) -> (f64, f64) {
        let sum_err = self
            .data
            .chunks(self.count)
            .map(|px| (px.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        (sum_err, min)
    }
}

/// `L × P` endmember signatures; column `j` is material `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    count: usize,
    /// Row-major `L × P`.
    data: Vec<f64>,
}

impl EndmemberMatrix {
    pub fn new(bands: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bands * count {
            return Err(Error::shape(
                "EndmemberMatrix::new",
                format!("{bands}x{count} needs {} values, got {}", bands * count, data.len()),
            ));
        }
        Ok(EndmemberMatrix { bands, count, data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let count = columns.len();
        let bands = columns.first().map_or(0, Vec::len);
        if count == 0 || columns.iter().any(|c| c.len() != bands) {
            return Err(Error::shape("EndmemberMatrix::from_columns", "columns must be non-empty and equal length"));
        }
        let data = (0..bands).flat_map(|l| columns.iter().map(move |c| c[l])).collect();
        Ok(EndmemberMatrix { bands, count, data })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, band: usize, j: usize) -> f64 {
        self.data[band * self.count + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.count).copied().collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.count).map(|j| self.column(j)).collect()
    }

    /// New matrix whose column `k` is this matrix's column `order[k]`.
    pub fn reorder(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.count {
            return Err(Error::shape("reorder", format!("{} indices for {} columns", order.len(), self.count)));
        }
        let cols = self.columns();
        Self::from_columns(&order.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>())
    }

    /// `M · α` for one abundance vector.
    pub fn mix(&self, abundances: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.count)
            .map(|row| row.iter().zip(abundances).map(|(m, a)| m * a).sum())
            .collect()
    }
}

/// Reference endmembers and abundances for a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceStack,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(data: Vec<f64>, h: usize, w: usize, l: usize) -> HsiCube {
        HsiCube::new(h, w, l, data).unwrap()
    }

    #[test]
    fn global_max_halves() {
        let c = cube(vec![0.5, 2.0, 1.0, 0.25], 1, 2, 2);
        let n = normalize(&c, NormalizeMode::GlobalMax).unwrap();
        assert_eq!(n.data(), &[0.25, 1.0, 0.5, 0.125]);
        assert_eq!(n.normalization, Some(NormalizeMode::GlobalMax));
    }

    #[test]
    fn normalize_is_idempotent() {
        let c = cube(vec![0.1, 0.3, 1.0, 0.7, 0.0, 0.9], 1, 2, 3);
        let once = normalize(&c, NormalizeMode::GlobalMax).unwrap();
        let twice = normalize(&once, NormalizeMode::GlobalMax).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn per_band_maxima_become_one() {
        // Band maxima {1, 2, 4}.
        let c = cube(vec![1.0, 2.0, 4.0, 0.5, 1.0, 1.0], 2, 1, 3);
        let n = normalize(&c, NormalizeMode::PerBand).unwrap();
        for b in 0..3 {
            let m = (0..2).map(|p| n.spectrum_at(p)[b]).fold(0.0, f64::max);
            assert_eq!(m, 1.0);
        }
        assert_eq!(n.spectrum_at(1), &[0.5, 0.5, 0.25]);
    }

    #[test]
    fn all_zero_cube_is_an_error() {
        let c = cube(vec![0.0; 8], 2, 2, 2);
        assert!(normalize(&c, NormalizeMode::GlobalMax).is_err());
        assert!(normalize(&c, NormalizeMode::PerBand).is_err());
    }

    #[test]
    fn stack_reorder_and_channels() {
        let s = AbundanceStack::new(1, 2, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.channel(2), vec![0.5, 0.0]);
        let r = s.reorder(&[2, 0, 1]).unwrap();
        assert_eq!(r.pixel(0), &[0.5, 0.2, 0.3]);
        assert!(s.constraint_violation().0 < 1e-15);
    }

    #[test]
    fn endmember_columns_round_trip() {
        let cols = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = EndmemberMatrix::from_columns(&cols).unwrap();
        assert_eq!(m.columns(), cols);
        assert_eq!(m.mix(&[0.5, 0.5]), vec![2.5, 3.5, 4.5]);
    }
}
