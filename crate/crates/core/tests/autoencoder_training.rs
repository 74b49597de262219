use std::sync::OnceLock;

use aegem::autoencoder::{train_autoencoder, AutoencoderConfig, TrainedAutoencoder};
use aegem::hsi::{normalize, synthesize_scene, AbundanceStack, GroundTruth, HsiCube, NormalizeMode, SceneSpec};
use aegem::metrics::{match_endmembers, sad};

struct Fixture {
    cube: HsiCube,
    truth: GroundTruth,
    trained: TrainedAutoencoder,
    /// Estimated abundances in truth channel order.
    abundances: AbundanceStack,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (cube, truth) = synthesize_scene(&SceneSpec::default()).unwrap();
        let cube = normalize(&cube, NormalizeMode::GlobalMax).unwrap();
        let config = AutoencoderConfig::default();
        let trained = train_autoencoder(&cube, &config).unwrap();
        let order = match_endmembers(&trained.endmembers, &truth.endmembers).unwrap().order();
        let abundances = trained.abundances.reorder(&order).unwrap();
        Fixture { cube, truth, trained, abundances }
    })
}

fn pure_pixels(truth: &AbundanceStack) -> Vec<(usize, usize)> {
    (0..truth.pixels())
        .filter_map(|p| {
            let a = truth.pixel(p);
            (0..a.len()).find(|&j| a[j] > 0.95).map(|j| (p, j))
        })
        .collect()
}

#[test]
fn loss_decreases() {
    let h = &fixture().trained.loss_history;
    assert!(h[49] < h[0], "{} vs {}", h[49], h[0]);
}

#[test]
fn endmembers_match_the_truth() {
    let f = fixture();
    let m = match_endmembers(&f.trained.endmembers, &f.truth.endmembers).unwrap();
    assert!(m.cost < 0.15, "mean SAD {}", m.cost);
    assert!(f.trained.endmembers.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn single_material_regions_have_a_dominant_channel() {
    let f = fixture();
    let pure = pure_pixels(&f.truth.abundances);
    assert!(pure.len() > 100);
    for j in 0..3 {
        let region: Vec<f64> = pure.iter().filter(|&&(_, k)| k == j).map(|&(p, _)| f.abundances.pixel(p)[j]).collect();
        let mean = region.iter().sum::<f64>() / region.len() as f64;
        assert!(mean > 0.8, "channel {j}: mean {mean} over {} pixels", region.len());
    }
}

fn reconstruction() -> Vec<f64> {
    let f = fixture();
    f.trained.model.reconstruct(&f.trained.abundances).unwrap()
}

#[test]
fn reconstructions_fit_the_cube() {
    let f = fixture();
    let recon = reconstruction();
    let l = f.cube.bands();
    let mse: Vec<f64> = (0..f.cube.pixels())
        .map(|p| f.cube.spectrum_at(p).iter().zip(&recon[p * l..(p + 1) * l]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / l as f64)
        .collect();
    let mean = mse.iter().sum::<f64>() / mse.len() as f64;
    assert!(mean < 1e-3, "mean per-pixel MSE {mean}");
}

#[test]
fn pure_pixels_reconstruct_to_their_endmember() {
    let f = fixture();
    let recon = reconstruction();
    let l = f.cube.bands();
    let pure = pure_pixels(&f.truth.abundances);
    let close = pure
        .iter()
        .filter(|&&(p, j)| sad(&recon[p * l..(p + 1) * l], &f.truth.endmembers.column(j)).unwrap() < 0.1)
        .count();
    assert!(close * 10 >= pure.len() * 9, "{close} of {}", pure.len());
}
