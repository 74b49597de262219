//! Two-layer graph convolutional refiner and its cross-validation harness.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::graph::EllipticalGraph;
use crate::hsi::{write_file, AbundanceStack, HsiCube};
use crate::tensor::{glorot_uniform, seeded_rng, Adam, SparseMatrix, Tape, Tensor, Var};

pub const TRAINING_LOG_HEADER: &str = "epoch,train_bce,val_bce";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    /// Each node's abundance vector.
    #[serde(rename = "abundance")]
    Abundance,
    /// Abundances followed by the leading principal-component scores of the
    /// node's spectrum.
    #[serde(rename = "abundance+spectrum_pca")]
    AbundanceSpectrumPca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of pixels whose ground-truth abundances are revealed.
    pub label_fraction: f64,
    /// Share of the labeled pixels held back for ensemble selection.
    pub validation_fraction: f64,
    pub folds: usize,
    /// Hidden sizes tried by cross-validation; empty skips it.
    pub cv_hidden: Vec<usize>,
    /// Learning rates tried by cross-validation.
    pub cv_learning_rates: Vec<f64>,
    pub features: FeatureMode,
    pub pca_components: usize,
    /// Skip the division by the channel sum after the sigmoid.
    pub paper_literal_asc: bool,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden: 128,
            epochs: 200,
            learning_rate: 0.001,
            label_fraction: 0.1,
            validation_fraction: 0.2,
            folds: 10,
            cv_hidden: Vec::new(),
            cv_learning_rates: Vec::new(),
            features: FeatureMode::Abundance,
            pca_components: 8,
            paper_literal_asc: false,
            seed: 0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction must be in (0, 1], got {}", self.label_fraction));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if self.hidden == 0 || self.cv_hidden.contains(&0) {
            return bad("hidden sizes must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || self.cv_learning_rates.iter().any(|lr| !(*lr > 0.0)) {
            return bad("learning rates must be > 0".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.features == FeatureMode::AbundanceSpectrumPca && self.pca_components == 0 {
            return bad("pca_components must be >= 1".into());
        }
        Ok(())
    }

    /// Every `(hidden, learning_rate)` pair of the cross-validation grid,
    /// falling back to the base value for an empty axis.
    pub fn grid(&self) -> Vec<(usize, f64)> {
        let hs = if self.cv_hidden.is_empty() { vec![self.hidden] } else { self.cv_hidden.clone() };
        let lrs = if self.cv_learning_rates.is_empty() { vec![self.learning_rate] } else { self.cv_learning_rates.clone() };
        hs.iter().flat_map(|&h| lrs.iter().map(move |&lr| (h, lr))).collect()
    }
}

/// `D^{−1/2} Â D^{−1/2}` with `Â = A + I` and `A_ij = exp(−sad_ij)` on every
/// undirected edge. Entries are sorted by (row, col).
pub fn normalized_operator(graph: &EllipticalGraph) -> SparseMatrix {
    let n = graph.nodes();
    let undirected = graph.undirected_edges();
    let mut degree = vec![1.0; n];
    for &(i, j, sad) in &undirected {
        let w = (-sad).exp();
        degree[i] += w;
        degree[j] += w;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])).collect();
    for &(i, j, sad) in &undirected {
        let v = inv_sqrt[i] * (-sad).exp() * inv_sqrt[j];
        entries.push((i, j, v));
        entries.push((j, i, v));
    }
    entries.sort_by_key(|&(r, c, _)| (r, c));
    SparseMatrix::new(n, n, entries).expect("indices come from the graph")
}

/// Node feature matrix `[N, F]`.
pub fn node_features(abundances: &AbundanceStack, cube: &HsiCube, config: &GcnConfig) -> Result<Tensor> {
    let n = abundances.pixels();
    let p = abundances.count();
    match config.features {
        FeatureMode::Abundance => Tensor::new(&[n, p], abundances.data().to_vec()),
        FeatureMode::AbundanceSpectrumPca => {
            if cube.pixels() != n {
                return Err(Error::shape("node_features", "cube and abundance stack differ in size"));
            }
            let k = config.pca_components.min(cube.bands());
            let scores = spectrum_pca(cube, k, config.seed);
            let mut data = Vec::with_capacity(n * (p + k));
            for i in 0..n {
                data.extend_from_slice(abundances.pixel(i));
                data.extend_from_slice(&scores[i * k..(i + 1) * k]);
            }
            Tensor::new(&[n, p + k], data)
        }
    }
}

/// Scores on the leading `k` principal components of the pixel spectra,
/// found by power iteration with deflation and divided by the standard
/// deviation along the first component. Row-major `[N, k]`.
pub fn spectrum_pca(cube: &HsiCube, k: usize, seed: u64) -> Vec<f64> {
    use rand::Rng as _;
    let (n, l) = (cube.pixels(), cube.bands());
    let mut mean = vec![0.0; l];
    for p in 0..n {
        for (m, v) in mean.iter_mut().zip(cube.spectrum_at(p)) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![0.0; l * l];
    for p in 0..n {
        let x: Vec<f64> = cube.spectrum_at(p).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..l {
            for j in 0..l {
                cov[i * l + j] += x[i] * x[j] / n as f64;
            }
        }
    }
    let mut rng = seeded_rng(seed);
    let mut components = Vec::with_capacity(k);
    let mut first_sd = 0.0;
    for c in 0..k {
        let mut v: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..l).map(|i| (0..l).map(|j| cov[i * l + j] * v[j]).sum()).collect();
            for u in &components {
                let d: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            lambda = norm;
            if delta < 1e-12 {
                break;
            }
        }
        for i in 0..l {
            for j in 0..l {
                cov[i * l + j] -= lambda * v[i] * v[j];
            }
        }
        if c == 0 {
            first_sd = lambda.sqrt();
        }
        if lambda <= 1e-12 * first_sd * first_sd {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        components.push(v);
    }
    let scale = if first_sd > 0.0 { 1.0 / first_sd } else { 1.0 };
    let mut out = Vec::with_capacity(n * k);
    for p in 0..n {
        let x: Vec<f64> = cube.spectrum_at(p).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for comp in &components {
            out.push(scale * comp.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

/// Labeled pixels for GCN training and for ensemble validation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Draws `⌈fraction·n⌉` labeled pixels by seeded shuffle and splits off
/// `⌈validation_fraction·count⌉` of them (at least one when possible).
pub fn split_labels(n: usize, label_fraction: f64, validation_fraction: f64, seed: u64) -> LabelSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed ^ 0x9e37_79b9_7f4a_7c15));
    let count = ((label_fraction * n as f64).ceil() as usize).clamp(1.min(n), n);
    idx.truncate(count);
    let mut n_val = (validation_fraction * count as f64).ceil() as usize;
    if validation_fraction > 0.0 && count >= 2 {
        n_val = n_val.clamp(1, count - 1);
    } else {
        n_val = 0;
    }
    let mut validation = idx.split_off(count - n_val);
    idx.sort_unstable();
    validation.sort_unstable();
    LabelSplit { train: idx, validation }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub w1: Tensor,
    pub w2: Tensor,
    pub operator: Arc<SparseMatrix>,
    pub paper_literal_asc: bool,
}

impl GcnModel {
    pub fn new(operator: Arc<SparseMatrix>, features: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        GcnModel {
            w1: glorot_uniform(&[features, hidden], features, hidden, &mut rng),
            w2: glorot_uniform(&[hidden, outputs], hidden, outputs, &mut rng),
            operator,
            paper_literal_asc: false,
        }
    }

    fn logits_on(&self, tape: &mut Tape, features: Var, w1: Var, w2: Var) -> Result<Var> {
        let ay = tape.spmm(self.operator.clone(), features)?;
        let h = tape.matmul(ay, w1)?;
        let h = tape.relu(h)?;
        let ah = tape.spmm(self.operator.clone(), h)?;
        tape.matmul(ah, w2)
    }

    fn check(&self, features: &Tensor) -> Result<()> {
        match features.shape() {
            [n, f] if *n == self.operator.cols && *f == self.w1.shape()[0] => Ok(()),
            s => Err(Error::shape(
                "gcn forward",
                format!("features {s:?} for {} nodes and {} inputs", self.operator.cols, self.w1.shape()[0]),
            )),
        }
    }

    /// Refined abundances `[N, P]`: sigmoid outputs divided by their row sum
    /// (unless `paper_literal_asc`).
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        let mut tape = Tape::new();
        let y = tape.constant(features.clone());
        let w1 = tape.constant(self.w1.clone());
        let w2 = tape.constant(self.w2.clone());
        let z = self.logits_on(&mut tape, y, w1, w2)?;
        let mut s = tape.sigmoid(z)?;
        if !self.paper_literal_asc {
            s = tape.row_normalize(s)?;
        }
        Ok(tape.value(s).clone())
    }

    /// Mean BCE of the sigmoid outputs against `targets` on `rows`, and the
    /// gradients with respect to `w1` and `w2`.
    pub fn loss_and_gradients(&self, features: &Tensor, targets: &Tensor, rows: &[usize]) -> Result<(f64, Tensor, Tensor)> {
        self.check(features)?;
        let mut tape = Tape::new();
        let y = tape.constant(features.clone());
        let w1 = tape.param(self.w1.clone());
        let w2 = tape.param(self.w2.clone());
        let z = self.logits_on(&mut tape, y, w1, w2)?;
        let loss = tape.bce_with_logits(z, targets.clone(), rows.to_vec())?;
        let value = tape.value(loss).item();
        let mut g = tape.backward(loss)?;
        Ok((value, g.take_or_zeros(w1, self.w1.shape()), g.take_or_zeros(w2, self.w2.shape())))
    }

    pub fn loss(&self, features: &Tensor, targets: &Tensor, rows: &[usize]) -> Result<f64> {
        self.check(features)?;
        let mut tape = Tape::new();
        let y = tape.constant(features.clone());
        let w1 = tape.constant(self.w1.clone());
        let w2 = tape.constant(self.w2.clone());
        let z = self.logits_on(&mut tape, y, w1, w2)?;
        let loss = tape.bce_with_logits(z, targets.clone(), rows.to_vec())?;
        Ok(tape.value(loss).item())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&[("gcn.w1".into(), self.w1.clone()), ("gcn.w2".into(), self.w2.clone())], path)
    }

    /// Restores `w1`/`w2` saved by [`GcnModel::save`] onto an operator.
    pub fn load(operator: Arc<SparseMatrix>, path: &Path) -> Result<Self> {
        let t = checkpoint::load(path)?;
        let w1 = t.iter().find(|(n, _)| n == "gcn.w1").map(|(_, v)| v.clone());
        let w2 = t.iter().find(|(n, _)| n == "gcn.w2").map(|(_, v)| v.clone());
        let (Some(w1), Some(w2)) = (w1, w2) else {
            return Err(Error::InvalidArgument(format!("{}: missing gcn.w1 or gcn.w2", path.display())));
        };
        if w1.shape().len() != 2 || w2.shape().len() != 2 || w1.shape()[1] != w2.shape()[0] {
            return Err(Error::shape("GcnModel::load", format!("w1 {:?}, w2 {:?}", w1.shape(), w2.shape())));
        }
        Ok(GcnModel {
            w1,
            w2,
            operator,
            paper_literal_asc: false,
        })
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_bce: f64,
    pub val_bce: Option<f64>,
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{TRAINING_LOG_HEADER}\n");
    for e in log {
        let val = e.val_bce.map(sig9).unwrap_or_default();
        writeln!(out, "{},{},{val}", e.epoch, sig9(e.train_bce)).expect("write to string");
    }
    out
}

pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    write_file(path, training_log_csv(log).as_bytes())
}

/// Adam on the labeled-node BCE. `log[e]` holds the loss before update `e`
/// and, when `val_rows` is non-empty, the validation BCE at that point.
pub fn train_gcn(
    operator: Arc<SparseMatrix>,
    features: &Tensor,
    targets: &Tensor,
    train_rows: &[usize],
    val_rows: &[usize],
    config: &GcnConfig,
) -> Result<(GcnModel, Vec<EpochLog>)> {
    config.validate()?;
    if train_rows.is_empty() {
        return Err(Error::InvalidArgument("GCN training needs at least one labeled node".into()));
    }
    let &[_, f] = features.shape() else {
        return Err(Error::shape("train_gcn", "features must be [N, F]"));
    };
    let p = targets.shape().get(1).copied().unwrap_or(0);
    let mut model = GcnModel::new(operator, f, config.hidden, p, config.seed);
    model.paper_literal_asc = config.paper_literal_asc;
    let mut adam = Adam::new(config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    let diverged = |epoch| Error::Divergence { stage: "gcn", epoch };
    for epoch in 0..config.epochs {
        let (loss, g1, g2) = model.loss_and_gradients(features, targets, train_rows).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(epoch),
            e => e,
        })?;
        if !loss.is_finite() {
            return Err(diverged(epoch));
        }
        let val_bce = if val_rows.is_empty() {
            None
        } else {
            Some(model.loss(features, targets, val_rows).map_err(|_| diverged(epoch))?)
        };
        log.push(EpochLog {
            epoch,
            train_bce: loss,
            val_bce,
        });
        adam.step(&mut [&mut model.w1, &mut model.w2], &[&g1, &g2]);
        if !model.w1.is_finite() || !model.w2.is_finite() {
            return Err(diverged(epoch));
        }
    }
    Ok((model, log))
}

/// Mean validation BCE of one grid point across folds.
#[derive(Clone, Debug, PartialEq)]
pub struct CvScore {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Final-epoch validation BCE per fold; `+∞` when training diverged.
    pub fold_losses: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub best_hidden: usize,
    pub best_learning_rate: f64,
    pub scores: Vec<CvScore>,
}

/// Fold `k` holds the shuffled labeled nodes at positions `≡ k (mod folds)`.
pub fn make_folds(labeled: &[usize], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = labeled.to_vec();
    order.shuffle(&mut seeded_rng(seed.wrapping_add(17)));
    let mut out = vec![Vec::new(); folds];
    for (i, node) in order.into_iter().enumerate() {
        out[i % folds].push(node);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// `k`-fold cross-validation over `config.grid()`. Ties go to the smaller
/// hidden size, then the smaller learning rate.
pub fn cross_validate(
    operator: Arc<SparseMatrix>,
    features: &Tensor,
    targets: &Tensor,
    labeled: &[usize],
    config: &GcnConfig,
) -> Result<CvResult> {
    config.validate()?;
    if labeled.len() < config.folds {
        return Err(Error::InvalidArgument(format!(
            "{} labeled nodes cannot fill {} folds; lower `folds` or raise `label_fraction`",
            labeled.len(),
            config.folds
        )));
    }
    let folds = make_folds(labeled, config.folds, config.seed);
    let mut scores = Vec::new();
    for (hidden, lr) in config.grid() {
        let cfg = GcnConfig {
            hidden,
            learning_rate: lr,
            ..config.clone()
        };
        let mut fold_losses = Vec::with_capacity(folds.len());
        for (k, val) in folds.iter().enumerate() {
            let train: Vec<usize> = folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
            let loss = match train_gcn(operator.clone(), features, targets, &train, &[], &cfg) {
                Ok((model, _)) => model.loss(features, targets, val).ok().filter(|l| l.is_finite()),
                Err(Error::Divergence { .. }) => None,
                Err(e) => return Err(e),
            };
            fold_losses.push(loss.unwrap_or(f64::INFINITY));
        }
        let mean = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
        scores.push(CvScore {
            hidden,
            learning_rate: lr,
            fold_losses,
            mean,
        });
    }
    let mut ranked: Vec<&CvScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(a.hidden.cmp(&b.hidden))
            .then(a.learning_rate.total_cmp(&b.learning_rate))
    });
    let best = ranked[0];
    Ok(CvResult {
        best_hidden: best.hidden,
        best_learning_rate: best.learning_rate,
        scores: scores.clone(),
    })
}

/// Targets `[N, P]` from a ground-truth stack.
pub fn targets_from(stack: &AbundanceStack) -> Tensor {
    Tensor::new(&[stack.pixels(), stack.count()], stack.data().to_vec()).expect("stack layout")
}

/// Converts refined `[N, P]` outputs back into an abundance stack.
pub fn to_stack(output: &Tensor, height: usize, width: usize) -> Result<AbundanceStack> {
    let &[n, p] = output.shape() else {
        return Err(Error::shape("to_stack", "output must be [N, P]"));
    };
    if n != height * width {
        return Err(Error::shape("to_stack", format!("{n} rows for {height}x{width}")));
    }
    AbundanceStack::new(height, width, p, output.data().to_vec())
}
