use std::sync::Arc;

use super::conv::{self, Geometry, Padding};
use super::{gemm, gemm_nt, gemm_tn, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Batch-norm variance floor.
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    /// Number of values each channel statistic was computed from.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Geometry,
    },
    MatMul(Var, Var),
    SpMM {
        matrix: Arc<SparseMatrix>,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
        scale: f64,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Pixel {
        x: Var,
        row: usize,
        col: usize,
    },
    SpectralAngle(Var, Var),
    Mse(Var, Var),
    BceWithLogits {
        logits: Var,
        target: Tensor,
        rows: Vec<usize>,
    },
    RowNormalize(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so its gradient can be replayed in reverse.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it and a single reverse sweep visits each reachable node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of the given shape when `var` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, var: Var, shape: &[usize]) -> Tensor {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(z, 0) + ln(1 + e^{-|z|})`, i.e. `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const ANGLE_NORM_EPS: f64 = 1e-24;
const ANGLE_COS_LIMIT: f64 = 1.0 - 1e-12;
const ROW_NORMALIZE_EPS: f64 = 1e-12;

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn grad_flag(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|&p| self.grad_flag(p));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf; its gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Stride-1 cross-correlation: `out[n,o,i,j] = b[o] + Σ w[o,c,u,v]·x[n,c,i+u-p,j+v-p]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let geom = Geometry::new(self.shape(input), self.shape(weight), padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), geom.cout),
                ));
            }
        }
        let out = conv::forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(&geom.output_shape(), out)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &parents,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return Err(Error::shape("matmul", "operands must be 2-D"));
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Constant sparse matrix times a dense `[rows, d]` variable.
    pub fn spmm(&mut self, matrix: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let &[rows, d] = self.shape(x) else {
            return Err(Error::shape("spmm", "dense operand must be 2-D"));
        };
        if rows != matrix.cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} operator times [{rows},{d}]", matrix.rows, matrix.cols),
            ));
        }
        let out = matrix.matmul_dense(self.value(x).data(), d);
        let value = Tensor::new(&[matrix.rows, d], out)?;
        self.push("spmm", value, Op::SpMM { matrix, x }, &[x])
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape(), v.data().iter().map(|&t| f(t)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.map(x, |t| t * factor);
        self.push("scale", value, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.map(x, |t| t.max(0.0));
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.map(x, |t| if t > 0.0 { t } else { slope * t });
        self.push("leaky_relu", value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.map(x, sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    /// `softmax(scale · x)` along `axis`, shifted by the maximum for stability.
    pub fn scaled_softmax(&mut self, x: Var, axis: usize, scale: f64) -> Result<Var> {
        if scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("softmax scale must be > 0, got {scale}")));
        }
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("scaled_softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| scale * src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (scale * src[at(k)] - m).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push("scaled_softmax", value, Op::Softmax { x, axis, scale }, &[x])
    }

    fn check_batch_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let &[n, c, h, w] = self.shape(x) else {
            return Err(Error::shape("batch_norm", "input must be [N,C,H,W]"));
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} channels but scale {:?} and shift {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok((n, c, h * w))
    }

    /// Training-mode batch normalization over the N, H, W axes. Returns the
    /// batch statistics so the caller can update its running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchNormStats)> {
        let (n, c, plane) = self.check_batch_norm(x, gamma, beta)?;
        let src = self.value(x).data();
        let count = n * plane;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let channel = || (0..n).flat_map(move |b| src[(b * c + ch) * plane..][..plane].iter());
            // Shifted by the first sample so a constant channel has an exact mean.
            let shift = src[ch * plane];
            let mu = shift + channel().map(|v| v - shift).sum::<f64>() / count as f64;
            mean[ch] = mu;
            var[ch] = channel().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, &mean, &inv_std, n, c, plane);
        let value = Tensor::new(self.shape(x), out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: true,
        };
        let var_out = self.push("batch_norm", value, op, &[x, gamma, beta])?;
        Ok((var_out, BatchNormStats { mean, var, count }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let (n, c, plane) = self.check_batch_norm(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics do not match channels"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, running_mean, &inv_std, n, c, plane);
        let value = Tensor::new(self.shape(x), out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: false,
        };
        self.push("batch_norm", value, op, &[x, gamma, beta])
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        plane: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for bi in 0..n {
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                for p in base..base + plane {
                    xhat[p] = (src[p] - mean[ch]) * inv_std[ch];
                    out[p] = g[ch] * xhat[p] + b[ch];
                }
            }
        }
        (xhat, out)
    }

    /// Selects one spatial position: `[N,C,H,W] -> [N,C]`.
    pub fn pixel(&mut self, x: Var, row: usize, col: usize) -> Result<Var> {
        let &[n, c, h, w] = self.shape(x) else {
            return Err(Error::shape("pixel", "input must be [N,C,H,W]"));
        };
        if row >= h || col >= w {
            return Err(Error::shape("pixel", format!("({row},{col}) outside {h}x{w}")));
        }
        let src = self.value(x).data();
        let out = (0..n * c).map(|nc| src[(nc * h + row) * w + col]).collect();
        self.push("pixel", Tensor::new(&[n, c], out)?, Op::Pixel { x, row, col }, &[x])
    }

    /// Row-wise spectral angle `arccos(⟨a,b⟩ / (‖a‖‖b‖))`: `[N,L] x [N,L] -> [N]`.
    pub fn spectral_angle(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("spectral_angle", a, b)?;
        let &[n, l] = self.shape(a) else {
            return Err(Error::shape("spectral_angle", "operands must be [N,L]"));
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = (0..n)
            .map(|r| {
                let (ra, rb) = (&va[r * l..(r + 1) * l], &vb[r * l..(r + 1) * l]);
                angle_parts(ra, rb).0
            })
            .collect();
        self.push("spectral_angle", Tensor::new(&[n], out)?, Op::SpectralAngle(a, b), &[a, b])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let total: f64 = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(total / va.len() as f64);
        self.push("mse", value, Op::Mse(a, b), &[a, b])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `target` over
    /// the listed rows of a `[N,P]` layout.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor, rows: Vec<usize>) -> Result<Var> {
        if self.shape(logits) != target.shape() || target.shape().len() != 2 {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {:?} vs target {:?}", self.shape(logits), target.shape()),
            ));
        }
        let (n, p) = (target.shape()[0], target.shape()[1]);
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::InvalidArgument("bce_with_logits needs non-empty in-range rows".into()));
        }
        let z = self.value(logits).data();
        let t = target.data();
        let mut total = 0.0;
        for &r in &rows {
            for k in r * p..(r + 1) * p {
                total += softplus(z[k]) - t[k] * z[k];
            }
        }
        let value = Tensor::scalar(total / (rows.len() * p) as f64);
        self.push("bce_with_logits", value, Op::BceWithLogits { logits, target, rows }, &[logits])
    }

    /// Divides each row of a `[N,P]` tensor by its sum, floored at 1e-12.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let &[n, p] = self.shape(x) else {
            return Err(Error::shape("row_normalize", "input must be [N,P]"));
        };
        let src = self.value(x).data();
        let mut out = src.to_vec();
        for r in 0..n {
            let row = &mut out[r * p..(r + 1) * p];
            let s = row.iter().sum::<f64>().max(ROW_NORMALIZE_EPS);
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push("row_normalize", Tensor::new(&[n, p], out)?, Op::RowNormalize(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push("mean", value, Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| matches!(node.op, Op::Leaf) && node.requires_grad)
                    .map(|data| Tensor::new(node.value.shape(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
        if !self.grad_flag(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let cg = conv::backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    geom,
                    self.grad_flag(*input),
                );
                if self.grad_flag(*input) {
                    self.accumulate(grads, *input, cg.input);
                }
                self.accumulate(grads, *weight, cg.weight);
                if let Some(b) = bias {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.grad_flag(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, g, self.value(*b).data(), &mut da, false);
                    self.accumulate(grads, *a, da);
                }
                if self.grad_flag(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(k, m, n, self.value(*a).data(), g, &mut db, false);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::SpMM { matrix, x } => {
                let d = self.shape(*x)[1];
                self.accumulate(grads, *x, matrix.matmul_dense_transposed(g, d));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.iter().map(|v| v * f).collect()),
            Op::Relu(x) => {
                let src = self.value(*x).data();
                let dx = g.iter().zip(src).map(|(g, &t)| if t > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let src = self.value(*x).data();
                let dx = g.iter().zip(src).map(|(g, &t)| if t > 0.0 { *g } else { slope * g }).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax { x, axis, scale } => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = scale * y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; y.len()];
                let count = (n * plane) as f64;
                for ch in 0..c {
                    let idx = || (0..n).flat_map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for p in idx() {
                        sum_g += g[p];
                        sum_gx += g[p] * xhat[p];
                    }
                    dbeta[ch] = sum_g;
                    dgamma[ch] = sum_gx;
                    let k = gam[ch] * inv_std[ch];
                    if *train {
                        for p in idx() {
                            dx[p] = k * (g[p] - sum_g / count - xhat[p] * sum_gx / count);
                        }
                    } else {
                        for p in idx() {
                            dx[p] = k * g[p];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Pixel { x, row, col } => {
                let shape = self.shape(*x);
                let (h, w) = (shape[2], shape[3]);
                let mut dx = vec![0.0; shape.iter().product()];
                for (nc, gv) in g.iter().enumerate() {
                    dx[(nc * h + row) * w + col] = *gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SpectralAngle(a, b) => {
                let l = self.shape(*a)[1];
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![0.0; va.len()];
                let mut db = vec![0.0; vb.len()];
                for (r, gr) in g.iter().enumerate() {
                    let span = r * l..(r + 1) * l;
                    let (ra, rb) = (&va[span.clone()], &vb[span.clone()]);
                    let (_, cos, na, nb) = angle_parts(ra, rb);
                    if cos.abs() >= ANGLE_COS_LIMIT {
                        continue;
                    }
                    let dtheta = -gr / (1.0 - cos * cos).sqrt();
                    for (k, idx) in span.enumerate() {
                        da[idx] = dtheta * (rb[k] / (na * nb) - cos * ra[k] / (na * na));
                        db[idx] = dtheta * (ra[k] / (na * nb) - cos * rb[k] / (nb * nb));
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let f = 2.0 * g[0] / va.len() as f64;
                let da: Vec<f64> = va.iter().zip(vb).map(|(x, y)| f * (x - y)).collect();
                let db = da.iter().map(|v| -v).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::BceWithLogits { logits, target, rows } => {
                let p = target.shape()[1];
                let z = self.value(*logits).data();
                let t = target.data();
                let f = g[0] / (rows.len() * p) as f64;
                let mut dz = vec![0.0; z.len()];
                for &r in rows {
                    for k in r * p..(r + 1) * p {
                        dz[k] += f * (sigmoid(z[k]) - t[k]);
                    }
                }
                self.accumulate(grads, *logits, dz);
            }
            Op::RowNormalize(x) => {
                let p = self.shape(*x)[1];
                let src = self.value(*x).data();
                let mut dx = vec![0.0; src.len()];
                for r in 0..src.len() / p {
                    let span = r * p..(r + 1) * p;
                    let total: f64 = src[span.clone()].iter().sum();
                    let s = total.max(ROW_NORMALIZE_EPS);
                    let dot: f64 = if total > ROW_NORMALIZE_EPS { span.clone().map(|k| g[k] * src[k]).sum() } else { 0.0 };
                    for k in span {
                        dx[k] = g[k] / s - dot / (s * s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
        }
    }
}

/// `(angle, clamped cosine, ‖a‖, ‖b‖)` for two equal-length vectors.
fn angle_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = (a.iter().map(|x| x * x).sum::<f64>() + ANGLE_NORM_EPS).sqrt();
    let nb = (b.iter().map(|x| x * x).sum::<f64>() + ANGLE_NORM_EPS).sqrt();
    let cos = (dot / (na * nb)).clamp(-ANGLE_COS_LIMIT, ANGLE_COS_LIMIT);
    (cos.acos(), cos, na, nb)
}
