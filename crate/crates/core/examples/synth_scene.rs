//! Generates a synthetic scene and writes it with its ground truth.
//!
//! cargo run --example synth_scene -- [out-dir]

use std::path::PathBuf;

use aegem::hsi::{save_cube, synthesize_scene, CubeFormat, Precision, SceneSpec};
use aegem::metrics::sad;
use aegem::pipeline::{save_truth, SCENE_CUBE};

fn main() -> aegem::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("aegem-scene"));
    let spec = SceneSpec { snr_db: 40.0, ..SceneSpec::default() };
    let (cube, truth) = synthesize_scene(&spec)?;

    println!("{}x{} pixels, {} bands, max reflectance {:.3}", cube.height(), cube.width(), cube.bands(), cube.max());
    let columns = truth.endmembers.columns();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            println!("SAD(em{i}, em{j}) = {:.3} rad", sad(&columns[i], &columns[j])?);
        }
    }
    let pure = (0..truth.abundances.pixels())
        .filter(|&p| truth.abundances.pixel(p).iter().any(|&a| a > 0.95))
        .count();
    println!("{pure} of {} pixels are > 95% one material", truth.abundances.pixels());

    let names: Vec<String> = (0..spec.endmembers).map(|j| format!("em{j}")).collect();
    save_truth(&truth, &names, &out)?;
    save_cube(&cube, &out.join(SCENE_CUBE), CubeFormat::Hsb, Precision::F64)?;
    println!("wrote {}", out.display());
    Ok(())
}
