//! Builds the elliptical pixel graph of a scene and inspects its spectrum.

use aegem::gcn::normalized_operator;
use aegem::graph::{build_kernel, tile_centroids, uncovered_pixels, EllipticalGraph, GraphConfig};
use aegem::hsi::{synthesize_scene, SceneSpec};

fn main() -> aegem::Result<()> {
    let kernel = build_kernel(3, 5)?;
    for dr in -3..=3 {
        let row: String = (-5..=5).map(|dc| if kernel.contains(dr, dc) { '#' } else { '.' }).collect();
        println!("  {row}");
    }

    let spec = SceneSpec { height: 24, width: 30, ..SceneSpec::default() };
    let (cube, _) = synthesize_scene(&spec)?;
    let centroids = tile_centroids(cube.height(), cube.width(), &kernel, 3, 5)?;
    println!("{} centroids, {} uncovered pixels", centroids.len(), uncovered_pixels(cube.height(), cube.width(), &kernel, &centroids).len());

    let graph = EllipticalGraph::from_cube(&cube, None, &GraphConfig::default())?;
    let weights: Vec<f64> = graph.edges.iter().map(|e| e.sad).collect();
    let max = weights.iter().copied().fold(0.0, f64::max);
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    println!("{} directed edges, SAD mean {mean:.4}, max {max:.4} rad", graph.edges.len());

    let op = normalized_operator(&graph);
    let n = graph.nodes();
    let dense = op.to_dense();
    let asym = (0..n * n).map(|k| (dense[k] - dense[(k % n) * n + k / n]).abs()).fold(0.0, f64::max);
    println!("propagation operator: {n}x{n}, max asymmetry {asym:.1e}");
    Ok(())
}
