//! Runs autoencoder, graph, GCN and ensemble end to end on a synthetic scene.
//!
//! cargo run --release --example full_pipeline -- [out-dir]

use std::path::PathBuf;

use aegem::config::RunConfig;
use aegem::pipeline;

fn main() -> aegem::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("aegem-run"));
    let mut config = RunConfig { out: out.clone(), ..RunConfig::default() };
    config.autoencoder.epochs = 20;
    config.autoencoder.train_stride = 2;

    let outcome = pipeline::run_once(&config, config.seed, &out)?;
    let selection = outcome.selection.as_ref().expect("synthetic scenes carry ground truth");
    for (j, choice) in selection.choices.iter().enumerate() {
        println!(
            "channel {j}: validation RMSE ae {:.4}, gcn {:.4} -> {choice}",
            selection.val_rmse_ae[j], selection.val_rmse_gcn[j]
        );
    }
    print!("{}", outcome.report.as_ref().unwrap().to_text());
    println!("artifacts in {}", out.display());
    Ok(())
}
