//! Linear-mixing synthetic scenes with known endmembers and abundances.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AbundanceStack, EndmemberMatrix, GroundTruth, HsiCube};
use crate::error::{Error, Result};
use crate::metrics::sad as spectral_angle;
use crate::tensor::{seeded_rng, Rng};

/// Largest endmember count the generator (and permutation matching) supports.
pub const MAX_ENDMEMBERS: usize = 6;
const MIN_SEPARATION_RAD: f64 = 0.15;
const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Gaussian blur sigma (pixels) applied to the per-pixel Dirichlet draws.
    pub smoothness: f64,
    /// Exponent applied to the blurred fractions before the final
    /// renormalization; 1 keeps the blurred Dirichlet field, larger values
    /// grow spatially coherent near-pure regions.
    pub sharpness: f64,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 32,
            width: 32,
            bands: 20,
            endmembers: 3,
            smoothness: 3.0,
            sharpness: 40.0,
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad(format!("scene dimensions must be positive, got {}x{}x{}", self.height, self.width, self.bands));
        }
        if self.endmembers == 0 || self.endmembers > MAX_ENDMEMBERS {
            return bad(format!("endmember count must be in 1..={MAX_ENDMEMBERS}, got {}", self.endmembers));
        }
        if self.endmembers > self.bands {
            return bad(format!("{} endmembers need at least as many bands, got {}", self.endmembers, self.bands));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("snr_db must be finite or +inf, got {}", self.snr_db));
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return bad(format!("smoothness must be >= 0, got {}", self.smoothness));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return bad(format!("sharpness must be > 0, got {}", self.sharpness));
        }
        Ok(())
    }
}

/// Draws endmembers and abundance fields, then mixes `M·α + η`.
pub fn synthesize_scene(spec: &SceneSpec) -> Result<(HsiCube, GroundTruth)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let endmembers = draw_endmembers(spec.bands, spec.endmembers, &mut rng)?;
    let abundances = draw_abundances(spec, &mut rng);

    let mut data = Vec::with_capacity(spec.height * spec.width * spec.bands);
    for p in 0..abundances.pixels() {
        data.extend(endmembers.mix(abundances.pixel(p)));
    }
    if spec.snr_db.is_finite() {
        let signal_power = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
        let sigma = (signal_power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
        for v in &mut data {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    let cube = HsiCube::new(spec.height, spec.width, spec.bands, data)?;
    Ok((cube, GroundTruth {
        endmembers,
        abundances,
    }))
}

/// Smooth positive spectra built from a baseline plus 2–4 Gaussian bumps,
/// redrawn until every pair is at least 0.15 rad apart.
fn draw_endmembers(bands: usize, count: usize, rng: &mut Rng) -> Result<EndmemberMatrix> {
    for _ in 0..MAX_REDRAWS {
        let columns: Vec<Vec<f64>> = (0..count).map(|_| gaussian_bump_spectrum(bands, rng)).collect();
        let separated = (0..count).all(|i| {
            (i + 1..count).all(|j| spectral_angle(&columns[i], &columns[j]).is_ok_and(|a| a >= MIN_SEPARATION_RAD))
        });
        if separated {
            return EndmemberMatrix::from_columns(&columns);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw {count} endmembers over {bands} bands with pairwise angle >= {MIN_SEPARATION_RAD} rad after {MAX_REDRAWS} attempts"
    )))
}

fn gaussian_bump_spectrum(bands: usize, rng: &mut Rng) -> Vec<f64> {
    let baseline = rng.random_range(0.05..0.2);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(2..=4))
        .map(|_| {
            (
                rng.random_range(0.2..1.0),
                rng.random_range(-0.1..1.1),
                rng.random_range(0.05..0.3),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
            baseline
                + bumps
                    .iter()
                    .map(|(amp, center, width)| amp * (-(x - center).powi(2) / (2.0 * width * width)).exp())
                    .sum::<f64>()
        })
        .collect()
}

fn draw_abundances(spec: &SceneSpec, rng: &mut Rng) -> AbundanceStack {
    let (h, w, p) = (spec.height, spec.width, spec.endmembers);
    // Dirichlet(1, …, 1) per pixel: normalized unit exponentials.
    let mut fields: Vec<Vec<f64>> = vec![vec![0.0; h * w]; p];
    for px in 0..h * w {
        let draws: Vec<f64> = (0..p).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        for (k, d) in draws.iter().enumerate() {
            fields[k][px] = d / total;
        }
    }
    for field in &mut fields {
        *field = gaussian_blur(field, h, w, spec.smoothness);
    }
    let mut data = vec![0.0; h * w * p];
    for px in 0..h * w {
        let blurred_total: f64 = fields.iter().map(|f| f[px]).sum();
        let sharpened: Vec<f64> = fields.iter().map(|f| (f[px] / blurred_total).powf(spec.sharpness)).collect();
        let total: f64 = sharpened.iter().sum();
        for k in 0..p {
            data[px * p + k] = sharpened[k] / total;
        }
    }
    AbundanceStack::new(h, w, p, data).expect("consistent dimensions")
}

/// Separable Gaussian blur with reflected borders, truncated at 3σ.
fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        // Repeated reflection covers radii larger than the image.
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * field[r * w + reflect(c as isize + k as isize - radius, w)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(r as isize + k as isize - radius, h) * w + c])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_pixels_equal_mixture() {
        let (cube, gt) = synthesize_scene(&SceneSpec::default()).unwrap();
        for p in 0..cube.pixels() {
            assert_eq!(cube.spectrum_at(p), gt.endmembers.mix(gt.abundances.pixel(p)).as_slice());
        }
    }

    #[test]
    fn abundances_satisfy_constraints() {
        let (_, gt) = synthesize_scene(&SceneSpec {
            seed: 9,
            endmembers: 5,
            ..SceneSpec::default()
        })
        .unwrap();
        let (sum_err, min) = gt.abundances.constraint_violation();
        assert!(sum_err <= 1e-9);
        assert!(min >= 0.0);
    }

    #[test]
    fn measured_snr_matches_request() {
        let spec = SceneSpec {
            snr_db: 30.0,
            seed: 4,
            ..SceneSpec::default()
        };
        let (cube, gt) = synthesize_scene(&spec).unwrap();
        let (mut signal, mut noise) = (0.0, 0.0);
        for p in 0..cube.pixels() {
            let clean = gt.endmembers.mix(gt.abundances.pixel(p));
            for (y, s) in cube.spectrum_at(p).iter().zip(&clean) {
                signal += s * s;
                noise += (y - s).powi(2);
            }
        }
        let snr = 10.0 * (signal / noise).log10();
        assert!((29.5..=30.5).contains(&snr), "snr {snr}");
    }

    #[test]
    fn endmembers_are_separated_and_positive() {
        let (_, gt) = synthesize_scene(&SceneSpec {
            endmembers: 6,
            seed: 1,
            ..SceneSpec::default()
        })
        .unwrap();
        let cols = gt.endmembers.columns();
        for i in 0..6 {
            assert!(cols[i].iter().all(|v| *v > 0.0));
            for j in i + 1..6 {
                assert!(spectral_angle(&cols[i], &cols[j]).unwrap() >= MIN_SEPARATION_RAD);
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let spec = SceneSpec {
            snr_db: 25.0,
            ..SceneSpec::default()
        };
        assert_eq!(synthesize_scene(&spec).unwrap(), synthesize_scene(&spec).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SceneSpec { endmembers: 9, ..SceneSpec::default() },
            SceneSpec { endmembers: 4, bands: 3, ..SceneSpec::default() },
            SceneSpec { height: 0, ..SceneSpec::default() },
            SceneSpec { snr_db: f64::NAN, ..SceneSpec::default() },
        ] {
            assert!(synthesize_scene(&spec).is_err());
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let f = vec![0.3; 20];
        assert!(gaussian_blur(&f, 4, 5, 2.0).iter().all(|v| (v - 0.3).abs() < 1e-15));
    }
}
