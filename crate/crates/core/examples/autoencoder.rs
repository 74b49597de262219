//! Trains the convolutional autoencoder on a synthetic scene and compares the
//! extracted endmembers with the truth.
//!
//! cargo run --release --example autoencoder -- [epochs]

use aegem::autoencoder::{train_autoencoder_with, AutoencoderConfig};
use aegem::hsi::{normalize, synthesize_scene, NormalizeMode, SceneSpec};
use aegem::metrics::{match_endmembers, rmse, sad};

fn main() -> aegem::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let (cube, truth) = synthesize_scene(&SceneSpec::default())?;
    let cube = normalize(&cube, NormalizeMode::GlobalMax)?;
    let config = AutoencoderConfig { epochs, train_stride: 2, ..AutoencoderConfig::with_endmembers(3) };

    let trained = train_autoencoder_with(&cube, &config, |epoch, _| {
        if epoch % 5 == 4 {
            println!("epoch {}", epoch + 1);
        }
    })?;
    println!("loss {:.5} -> {:.5}", trained.loss_history[0], trained.loss_history.last().unwrap());

    let matched = match_endmembers(&trained.endmembers, &truth.endmembers)?;
    let order = matched.order();
    let abundances = trained.abundances.reorder(&order)?;
    let endmembers = trained.endmembers.reorder(&order)?;
    for k in 0..truth.endmembers.count() {
        println!(
            "em{k}: SAD {:.4} rad, abundance RMSE {:.4}",
            sad(&endmembers.column(k), &truth.endmembers.column(k))?,
            rmse(&truth.abundances.channel(k), &abundances.channel(k))?
        );
    }
    Ok(())
}
