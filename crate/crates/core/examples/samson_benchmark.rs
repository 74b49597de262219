//! Ten-seed benchmark on the Samson scene.
//!
//! cargo run --release --example samson_benchmark -- <samson-dir> [out-dir]
//!
//! `<samson-dir>` holds `cube.hsb` (or `cube.csv`) and the
//! reference `endmembers.csv` / `abundances.csv` with a Tree,Soil,Water header.

use std::path::PathBuf;

use aegem::config::{InputConfig, RunConfig};
use aegem::pipeline;

const REFERENCE_RMSE: [f64; 3] = [0.158, 0.182, 0.081];
const REFERENCE_SAD: [f64; 3] = [0.029, 0.024, 0.079];

fn main() -> aegem::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(data) = args.next().map(PathBuf::from) else {
        eprintln!("usage: samson_benchmark <samson-dir> [out-dir]");
        std::process::exit(1);
    };
    let cube = ["cube.hsb", "cube.csv"].iter().map(|f| data.join(f)).find(|p| p.exists()).unwrap_or_else(|| data.join("cube.hsb"));
    let config = RunConfig {
        repeat: 10,
        out: args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("samson-runs")),
        input: Some(InputConfig { cube, format: None, truth: Some(data.clone()), endmembers: None }),
        scene: None,
        ..RunConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcomes = pipeline::run(&config, threads)?;
    let reports: Vec<_> = outcomes.iter().filter_map(|o| o.report.as_ref()).collect();
    let n = reports.len() as f64;

    println!("{:<8} {:>10} {:>10} {:>10} {:>10}", "", "RMSE", "(ref)", "SAD", "(ref)");
    for (k, row) in reports[0].materials.iter().enumerate() {
        let r = reports.iter().map(|m| m.materials[k].rmse_final).sum::<f64>() / n;
        let s = reports.iter().map(|m| m.materials[k].sad).sum::<f64>() / n;
        println!("{:<8} {r:>10.3} {:>10.3} {s:>10.3} {:>10.3}", row.material, REFERENCE_RMSE.get(k).unwrap_or(&f64::NAN), REFERENCE_SAD.get(k).unwrap_or(&f64::NAN));
    }
    Ok(())
}
