//! Reverse-mode gradients of a small conv net checked against central
//! differences.

use aegem::tensor::{Padding, Tape, Tensor, Var};

fn net(tape: &mut Tape, x: Var, w: Var, b: Var) -> aegem::Result<Var> {
    let y = tape.conv2d(x, w, Some(b), Padding::Same)?;
    let y = tape.leaky_relu(y, 0.01)?;
    let y = tape.scaled_softmax(y, 1, 3.5)?;
    let y = tape.mul(y, y)?;
    tape.sum(y)
}

fn main() -> aegem::Result<()> {
    let x = Tensor::from_fn(&[2, 3, 5, 5], |i| (i as f64 * 1.7).sin());
    let w = Tensor::from_fn(&[4, 3, 3, 3], |i| 0.3 * (i as f64 * 0.9 + 0.4).cos());
    let b = Tensor::from_fn(&[4], |i| 0.1 * i as f64 + 0.05);

    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.param(x.clone()), tape.param(w.clone()), tape.param(b.clone()));
    let loss = net(&mut tape, xv, wv, bv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(wv).expect("weight gradient").clone();

    let eval = |w: &Tensor| -> aegem::Result<f64> {
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let l = net(&mut t, xv, wv, bv)?;
        Ok(t.value(l).item())
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[k] += h;
        let mut down = w.clone();
        down.data_mut()[k] -= h;
        let numeric = (eval(&up)? - eval(&down)?) / (2.0 * h);
        worst = worst.max((numeric - analytic.data()[k]).abs());
    }
    println!("{} weight gradients, max |analytic - numeric| = {worst:.2e}", w.len());
    Ok(())
}
