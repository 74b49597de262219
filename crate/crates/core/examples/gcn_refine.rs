//! Refines noisy abundance maps with the two-layer GCN over the elliptical
//! graph, training on 10% of the pixels.

use aegem::gcn::{node_features, normalized_operator, split_labels, targets_from, to_stack, train_gcn, GcnConfig};
use aegem::graph::{EllipticalGraph, GraphConfig};
use aegem::hsi::{synthesize_scene, AbundanceStack, SceneSpec};
use aegem::metrics::rmse;
use rand::{Rng, SeedableRng};

fn main() -> aegem::Result<()> {
    let (cube, truth) = synthesize_scene(&SceneSpec::default())?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let noisy: Vec<f64> = truth.abundances.data().iter().map(|a| (a + rng.random_range(-0.2..0.2)).max(0.0)).collect();
    let mut noisy = AbundanceStack::new(cube.height(), cube.width(), 3, noisy)?;
    noisy.renormalize();

    let graph = EllipticalGraph::from_cube(&cube, Some(&noisy), &GraphConfig::default())?;
    let config = GcnConfig { learning_rate: 0.01, ..GcnConfig::default() };
    let split = split_labels(cube.pixels(), config.label_fraction, config.validation_fraction, 0);
    let operator = normalized_operator(&graph).into_shared();
    let features = node_features(&noisy, &cube, &config)?;
    let (model, log) = train_gcn(operator, &features, &targets_from(&truth.abundances), &split.train, &split.validation, &config)?;
    println!("BCE {:.4} -> {:.4}", log[0].train_bce, log.last().unwrap().train_bce);

    let refined = to_stack(&model.forward(&features)?, cube.height(), cube.width())?;
    for j in 0..3 {
        println!(
            "em{j}: input RMSE {:.4}, refined RMSE {:.4}",
            rmse(&truth.abundances.channel(j), &noisy.channel(j))?,
            rmse(&truth.abundances.channel(j), &refined.channel(j))?
        );
    }
    Ok(())
}
