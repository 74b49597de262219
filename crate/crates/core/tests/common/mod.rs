//! Independent oracles shared by the integration test targets.
#![allow(dead_code)]

use aegem::tensor::{Tape, Tensor, Var};
use aegem::Result;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Central-difference gradient check of `build` at `inputs`.
///
/// Returns the worst relative error `‖g_rev - g_fd‖₂ / max(‖g_rev‖₂, ‖g_fd‖₂)`
/// over all inputs.
pub fn gradient_check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    const H: f64 = 1e-6;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");

    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars).expect("forward");
        tape.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.len()];
        let mut probe: Vec<Tensor> = inputs.to_vec();
        for k in 0..input.len() {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + H;
            let up = eval(&probe);
            probe[i].data_mut()[k] = orig - H;
            let down = eval(&probe);
            probe[i].data_mut()[k] = orig;
            numeric[k] = (up - down) / (2.0 * H);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Weighted sum `Σ r ⊙ y` turning any output into a scalar with a
/// non-trivial upstream gradient.
pub fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let r = tape.constant(weights.clone());
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

/// Direct nested-loop stride-1 cross-correlation.
pub fn conv2d_nested(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    pad: usize,
) -> Tensor {
    let [n, cin, h, wd] = x.shape().try_into().unwrap();
    let [cout, _, kh, kw] = w.shape().try_into().unwrap();
    let ho = h + 2 * pad - kh + 1;
    let wo = wd + 2 * pad - kw + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = bias.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = i as isize + u as isize - pad as isize;
                                let q = j as isize + v as isize - pad as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                    continue;
                                }
                                s += w.data()[((o * cin + c) * kh + u) * kw + v]
                                    * x.data()[((b * cin + c) * h + r as usize) * wd + q as usize];
                            }
                        }
                    }
                    out[((b * cout + o) * ho + i) * wo + j] = s;
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

/// Dense symmetric eigenvalues via nalgebra, ascending.
pub fn symmetric_eigenvalues(n: usize, dense: &[f64]) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(n, n, dense);
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
