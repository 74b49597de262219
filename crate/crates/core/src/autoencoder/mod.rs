//! Convolutional unmixing autoencoder.
//!
//! The encoder maps an `L`-band patch to `P` abundance channels through a
//! stack of same-padded convolutions and a scaled softmax; the decoder is a
//! batch norm followed by one non-negative `P → L` convolution.

mod patches;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use patches::{extract_patches, patch_batch, patch_centers};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::hsi::{atgp, AbundanceStack, EndmemberMatrix, HsiCube};
use crate::tensor::{glorot_uniform, seeded_rng, Adam, BatchNormStats, Gradients, Padding, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeLoss {
    /// Spectral angle between the input and reconstructed center pixels.
    Sad,
    /// Mean squared error over the whole patch.
    Mse,
    /// `Sad + mse_weight · Mse`.
    SadPlusMse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInit {
    /// Absolute-valued Glorot uniform.
    Glorot,
    /// Center taps set to pixels picked by [`atgp`], other taps zero, and
    /// batch norm set to undo the initial abundance statistics.
    Atgp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub patch_size: usize,
    /// Output channels of each encoder convolution; the last entry is `P`.
    pub encoder_filters: Vec<usize>,
    pub encoder_kernels: Vec<usize>,
    pub leaky_slope: f64,
    pub softmax_scale: f64,
    pub decoder_kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: AeLoss,
    pub mse_weight: f64,
    /// Stride of the training patch grid; 1 trains on every pixel.
    pub train_stride: usize,
    pub batch_norm_momentum: f64,
    /// Batch norm between the softmax and the decoder convolution.
    pub decoder_batch_norm: bool,
    pub decoder_init: DecoderInit,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            patch_size: 9,
            encoder_filters: vec![128, 64, 32, 3],
            encoder_kernels: vec![5, 3, 3, 1],
            leaky_slope: 0.01,
            softmax_scale: 5.0,
            decoder_kernel: 7,
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            loss: AeLoss::SadPlusMse,
            mse_weight: 0.5,
            train_stride: 1,
            batch_norm_momentum: 0.1,
            decoder_batch_norm: true,
            decoder_init: DecoderInit::Atgp,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    /// Default configuration for `p` endmembers.
    pub fn with_endmembers(p: usize) -> Self {
        let mut cfg = Self::default();
        *cfg.encoder_filters.last_mut().expect("non-empty") = p;
        cfg
    }

    pub fn endmembers(&self) -> usize {
        self.encoder_filters.last().copied().unwrap_or(0)
    }

    /// Pixels of context the encoder sees on each side of its output pixel.
    pub fn receptive_radius(&self) -> usize {
        self.encoder_kernels.iter().map(|k| k / 2).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.encoder_filters.is_empty() || self.encoder_filters.len() != self.encoder_kernels.len() {
            return bad(format!(
                "encoder_filters ({}) and encoder_kernels ({}) must be non-empty and the same length",
                self.encoder_filters.len(),
                self.encoder_kernels.len()
            ));
        }
        if self.encoder_filters.contains(&0) {
            return bad("encoder filter counts must be positive".into());
        }
        let kernels = self.encoder_kernels.iter().chain([&self.decoder_kernel, &self.patch_size]);
        if let Some(k) = kernels.clone().find(|k| *k % 2 == 0) {
            return bad(format!("kernel and patch sizes must be odd, got {k}"));
        }
        if self.receptive_radius() > self.patch_size / 2 {
            return bad(format!(
                "encoder receptive radius {} exceeds the patch radius {}",
                self.receptive_radius(),
                self.patch_size / 2
            ));
        }
        if self.batch_size == 0 || self.train_stride == 0 {
            return bad("batch_size and train_stride must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.softmax_scale > 0.0) || !(self.mse_weight >= 0.0) {
            return bad("learning_rate and softmax_scale must be > 0, mse_weight >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) {
            return bad(format!("batch_norm_momentum must be in [0, 1], got {}", self.batch_norm_momentum));
        }
        Ok(())
    }
}

/// Trainable weights plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    config: AutoencoderConfig,
    bands: usize,
    encoder_weights: Vec<Tensor>,
    encoder_biases: Vec<Tensor>,
    bn_gamma: Tensor,
    bn_beta: Tensor,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    decoder_weight: Tensor,
}

struct Handles {
    encoder_weights: Vec<Var>,
    encoder_biases: Vec<Var>,
    bn_gamma: Var,
    bn_beta: Var,
    decoder_weight: Var,
}

impl Autoencoder {
    /// Glorot-uniform encoder, zero biases, unit batch norm and an
    /// absolute-valued Glorot decoder.
    pub fn new(config: &AutoencoderConfig, bands: usize) -> Result<Self> {
        config.validate()?;
        if bands == 0 {
            return Err(Error::InvalidArgument("cube has no bands".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut encoder_weights = Vec::new();
        let mut encoder_biases = Vec::new();
        let mut cin = bands;
        for (&cout, &k) in config.encoder_filters.iter().zip(&config.encoder_kernels) {
            encoder_weights.push(glorot_uniform(&[cout, cin, k, k], cin * k * k, cout * k * k, &mut rng));
            encoder_biases.push(Tensor::zeros(&[cout]));
            cin = cout;
        }
        let p = config.endmembers();
        let k = config.decoder_kernel;
        let mut decoder_weight = glorot_uniform(&[bands, p, k, k], p * k * k, bands * k * k, &mut rng);
        decoder_weight.data_mut().iter_mut().for_each(|w| *w = w.abs());
        Ok(Autoencoder {
            config: config.clone(),
            bands,
            encoder_weights,
            encoder_biases,
            bn_gamma: Tensor::full(&[p], 1.0),
            bn_beta: Tensor::zeros(&[p]),
            running_mean: vec![0.0; p],
            running_var: vec![1.0; p],
            decoder_weight,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn endmember_count(&self) -> usize {
        self.config.endmembers()
    }

    pub fn decoder_weight(&self) -> &Tensor {
        &self.decoder_weight
    }

    pub fn encoder_weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.encoder_weights
    }

    pub fn encoder_biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.encoder_biases
    }

    pub fn decoder_weight_mut(&mut self) -> &mut Tensor {
        &mut self.decoder_weight
    }

    pub fn batch_norm_mut(&mut self) -> (&mut Tensor, &mut Tensor, &mut Vec<f64>, &mut Vec<f64>) {
        (&mut self.bn_gamma, &mut self.bn_beta, &mut self.running_mean, &mut self.running_var)
    }

    fn record(&self, tape: &mut Tape, trainable: bool) -> Handles {
        let mut leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        Handles {
            encoder_weights: self.encoder_weights.iter().map(&mut leaf).collect(),
            encoder_biases: self.encoder_biases.iter().map(&mut leaf).collect(),
            bn_gamma: leaf(&self.bn_gamma),
            bn_beta: leaf(&self.bn_beta),
            decoder_weight: leaf(&self.decoder_weight),
        }
    }

    fn encode_on(&self, tape: &mut Tape, h: &Handles, x: Var) -> Result<Var> {
        let mut y = x;
        let last = h.encoder_weights.len() - 1;
        for (i, (&w, &b)) in h.encoder_weights.iter().zip(&h.encoder_biases).enumerate() {
            y = tape.conv2d(y, w, Some(b), Padding::Same)?;
            if i < last {
                y = tape.leaky_relu(y, self.config.leaky_slope)?;
            }
        }
        tape.scaled_softmax(y, 1, self.config.softmax_scale)
    }

    fn decode_infer_on(&self, tape: &mut Tape, h: &Handles, a: Var) -> Result<Var> {
        let y = if self.config.decoder_batch_norm {
            tape.batch_norm_infer(a, h.bn_gamma, h.bn_beta, &self.running_mean, &self.running_var)?
        } else {
            a
        };
        tape.conv2d(y, h.decoder_weight, None, Padding::Same)
    }

    /// Abundances for a `[N, L, k, k]` patch batch: `[N, P, k, k]`, summing to
    /// one over the channel axis at every position.
    pub fn encode(&self, patches: &Tensor) -> Result<Tensor> {
        self.check_input(patches)?;
        let mut tape = Tape::new();
        let h = self.record(&mut tape, false);
        let x = tape.constant(patches.clone());
        let a = self.encode_on(&mut tape, &h, x)?;
        Ok(tape.value(a).clone())
    }

    /// Inference-mode reconstruction of a `[N, P, h, w]` abundance batch.
    pub fn decode(&self, abundances: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let h = self.record(&mut tape, false);
        let a = tape.constant(abundances.clone());
        let y = self.decode_infer_on(&mut tape, &h, a)?;
        Ok(tape.value(y).clone())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            [_, l, _, _] if *l == self.bands => Ok(()),
            s => Err(Error::shape("autoencoder", format!("expected [N, {}, H, W], got {s:?}", self.bands))),
        }
    }

    /// Training-mode loss on one patch batch. Returns the tape, the loss, the
    /// parameter handles and the batch-norm statistics.
    fn training_loss(&self, patches: Tensor) -> Result<(Tape, Var, Handles, Option<BatchNormStats>)> {
        let mut tape = Tape::new();
        let h = self.record(&mut tape, true);
        let x = tape.constant(patches);
        let a = self.encode_on(&mut tape, &h, x)?;
        let (y, stats) = if self.config.decoder_batch_norm {
            let (y, stats) = tape.batch_norm_train(a, h.bn_gamma, h.bn_beta)?;
            (y, Some(stats))
        } else {
            (a, None)
        };
        let recon = tape.conv2d(y, h.decoder_weight, None, Padding::Same)?;
        let loss = self.reconstruction_loss(&mut tape, x, recon)?;
        Ok((tape, loss, h, stats))
    }

    fn reconstruction_loss(&self, tape: &mut Tape, x: Var, recon: Var) -> Result<Var> {
        let c = self.config.patch_size / 2;
        let sad = |tape: &mut Tape| -> Result<Var> {
            let xc = tape.pixel(x, c, c)?;
            let rc = tape.pixel(recon, c, c)?;
            let angles = tape.spectral_angle(rc, xc)?;
            tape.mean(angles)
        };
        match self.config.loss {
            AeLoss::Sad => sad(tape),
            AeLoss::Mse => tape.mse(recon, x),
            AeLoss::SadPlusMse => {
                let s = sad(tape)?;
                let m = tape.mse(recon, x)?;
                let m = tape.scale(m, self.config.mse_weight)?;
                tape.add(s, m)
            }
        }
    }

    /// Loss of the configured objective on a patch batch with training-mode
    /// batch norm, without updating anything.
    pub fn loss(&self, patches: &Tensor) -> Result<f64> {
        self.check_input(patches)?;
        let (tape, loss, _, _) = self.training_loss(patches.clone())?;
        Ok(tape.value(loss).item())
    }

    /// Gradient of [`Autoencoder::loss`] with respect to every trainable
    /// tensor, in the order encoder weights, encoder biases, gamma, beta,
    /// decoder weight.
    pub fn loss_gradients(&self, patches: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(patches)?;
        let (tape, loss, h, _) = self.training_loss(patches.clone())?;
        Ok(self.collect(tape.backward(loss)?, &h))
    }

    /// One optimizer step on a patch batch; returns the batch loss.
    fn train_step(&mut self, adam: &mut Adam, patches: Tensor) -> Result<f64> {
        let (tape, loss, h, stats) = self.training_loss(patches)?;
        let loss_value = tape.value(loss).item();
        let grads = self.collect(tape.backward(loss)?, &h);
        let mut params: Vec<&mut Tensor> = self.encoder_weights.iter_mut().collect();
        params.extend(self.encoder_biases.iter_mut());
        params.push(&mut self.bn_gamma);
        params.push(&mut self.bn_beta);
        params.push(&mut self.decoder_weight);
        adam.step(&mut params, &grads.iter().collect::<Vec<_>>());
        self.decoder_weight.data_mut().iter_mut().for_each(|w| *w = w.max(0.0));

        let Some(stats) = stats else { return Ok(loss_value) };
        let m = self.config.batch_norm_momentum;
        let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * stats.var[j] * unbias;
        }
        Ok(loss_value)
    }

    fn collect(&self, mut grads: Gradients, h: &Handles) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (v, t) in h.encoder_weights.iter().zip(&self.encoder_weights) {
            out.push(grads.take_or_zeros(*v, t.shape()));
        }
        for (v, t) in h.encoder_biases.iter().zip(&self.encoder_biases) {
            out.push(grads.take_or_zeros(*v, t.shape()));
        }
        out.push(grads.take_or_zeros(h.bn_gamma, self.bn_gamma.shape()));
        out.push(grads.take_or_zeros(h.bn_beta, self.bn_beta.shape()));
        out.push(grads.take_or_zeros(h.decoder_weight, self.decoder_weight.shape()));
        out
    }

    /// Data-dependent start: decoder center taps hold the [`atgp`] pixels of
    /// `cube` and batch norm maps the current abundance statistics of `cube`
    /// back onto themselves.
    pub fn initialize_from(&mut self, cube: &HsiCube) -> Result<()> {
        let p = self.endmember_count();
        let (pixels, _) = atgp(cube, p)?;
        let k = self.config.decoder_kernel;
        let c = k / 2;
        let w = self.decoder_weight.data_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        for b in 0..self.bands {
            for j in 0..p {
                w[((b * p + j) * k + c) * k + c] = pixels.get(b, j);
            }
        }
        let abundances = self.encode_cube(cube)?;
        let n = abundances.pixels() as f64;
        for j in 0..p {
            let channel = abundances.channel(j);
            let mean = channel.iter().sum::<f64>() / n;
            let var = channel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            self.bn_gamma.data_mut()[j] = (var + crate::tensor::BATCH_NORM_EPS).sqrt();
            self.bn_beta.data_mut()[j] = mean;
            self.running_mean[j] = mean;
            self.running_var[j] = var;
        }
        Ok(())
    }

    /// Per-pixel abundances from stride-1 patches, evaluated as one
    /// convolution pass over the zero-padded cube in row strips. Equal to
    /// encoding each patch and keeping its center.
    pub fn encode_cube(&self, cube: &HsiCube) -> Result<AbundanceStack> {
        if cube.bands() != self.bands {
            return Err(Error::shape("encode_cube", format!("model has {} bands, cube has {}", self.bands, cube.bands())));
        }
        let (hh, ww, l) = (cube.height(), cube.width(), self.bands);
        let p = self.endmember_count();
        let pad = self.config.receptive_radius();
        let pw = ww + 2 * pad;
        let strip_rows = (4096 / pw).max(1);
        let mut out = vec![0.0; hh * ww * p];
        let mut r0 = 0;
        while r0 < hh {
            let rows = strip_rows.min(hh - r0);
            let ph = rows + 2 * pad;
            let mut x = vec![0.0; l * ph * pw];
            for sr in 0..ph {
                let Some(r) = (r0 + sr).checked_sub(pad).filter(|&r| r < hh) else { continue };
                for c in 0..ww {
                    for (b, &v) in cube.spectrum(r, c).iter().enumerate() {
                        x[(b * ph + sr) * pw + c + pad] = v;
                    }
                }
            }
            let a = self.encode(&Tensor::new(&[1, l, ph, pw], x)?)?;
            for sr in 0..rows {
                for c in 0..ww {
                    for j in 0..p {
                        out[((r0 + sr) * ww + c) * p + j] = a.data()[(j * ph + sr + pad) * pw + c + pad];
                    }
                }
            }
            r0 += rows;
        }
        AbundanceStack::new(hh, ww, p, out)
    }

    /// Inference-mode reconstruction of every pixel from a full abundance stack.
    pub fn reconstruct(&self, abundances: &AbundanceStack) -> Result<Vec<f64>> {
        let (h, w, p) = (abundances.height(), abundances.width(), abundances.count());
        let mut a = vec![0.0; p * h * w];
        for px in 0..h * w {
            for j in 0..p {
                a[j * h * w + px] = abundances.pixel(px)[j];
            }
        }
        let y = self.decode(&Tensor::new(&[1, p, h, w], a)?)?;
        let l = self.bands;
        let mut out = vec![0.0; h * w * l];
        for px in 0..h * w {
            for b in 0..l {
                out[px * l + b] = y.data()[b * h * w + px];
            }
        }
        Ok(out)
    }

    /// Decoder response, inference mode, at the center of a spatially
    /// constant abundance field for each row of `fields` (`[N, P]`).
    pub fn constant_field_response(&self, fields: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let p = self.endmember_count();
        let k = self.config.decoder_kernel;
        let mut a = Vec::with_capacity(fields.len() * p * k * k);
        for f in fields {
            if f.len() != p {
                return Err(Error::shape("constant_field_response", format!("field of {} channels, model has {p}", f.len())));
            }
            for &v in f {
                a.extend(std::iter::repeat_n(v, k * k));
            }
        }
        let y = self.decode(&Tensor::new(&[fields.len(), p, k, k], a)?)?;
        let c = k / 2;
        Ok((0..fields.len())
            .map(|n| (0..self.bands).map(|b| y.data()[((n * self.bands + b) * k + c) * k + c]).collect())
            .collect())
    }

    /// Column `j` is the decoder's response to a constant one-hot field in
    /// channel `j`, clamped at zero.
    pub fn endmembers(&self) -> Result<EndmemberMatrix> {
        let p = self.endmember_count();
        let one_hot: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let columns = self
            .constant_field_response(&one_hot)?
            .into_iter()
            .map(|c| c.into_iter().map(|v| v.max(0.0)).collect())
            .collect::<Vec<Vec<f64>>>();
        EndmemberMatrix::from_columns(&columns)
    }

    pub fn to_tensors(&self) -> checkpoint::NamedTensors {
        let mut out = Vec::new();
        for (i, (w, b)) in self.encoder_weights.iter().zip(&self.encoder_biases).enumerate() {
            out.push((format!("encoder.{i}.weight"), w.clone()));
            out.push((format!("encoder.{i}.bias"), b.clone()));
        }
        let p = self.endmember_count();
        out.push(("bn.gamma".into(), self.bn_gamma.clone()));
        out.push(("bn.beta".into(), self.bn_beta.clone()));
        out.push(("bn.running_mean".into(), Tensor::new(&[p], self.running_mean.clone()).expect("p values")));
        out.push(("bn.running_var".into(), Tensor::new(&[p], self.running_var.clone()).expect("p values")));
        out.push(("decoder.weight".into(), self.decoder_weight.clone()));
        out
    }

    /// Restores weights saved by [`Autoencoder::save`] into a model built
    /// from the same configuration and band count.
    pub fn from_tensors(config: &AutoencoderConfig, bands: usize, tensors: &[(String, Tensor)]) -> Result<Self> {
        let mut model = Self::new(config, bands)?;
        for i in 0..model.encoder_weights.len() {
            let shape = model.encoder_weights[i].shape().to_vec();
            model.encoder_weights[i] = checkpoint::find(tensors, &format!("encoder.{i}.weight"), &shape)?.clone();
            let shape = model.encoder_biases[i].shape().to_vec();
            model.encoder_biases[i] = checkpoint::find(tensors, &format!("encoder.{i}.bias"), &shape)?.clone();
        }
        let p = model.endmember_count();
        model.bn_gamma = checkpoint::find(tensors, "bn.gamma", &[p])?.clone();
        model.bn_beta = checkpoint::find(tensors, "bn.beta", &[p])?.clone();
        model.running_mean = checkpoint::find(tensors, "bn.running_mean", &[p])?.data().to_vec();
        model.running_var = checkpoint::find(tensors, "bn.running_var", &[p])?.data().to_vec();
        let shape = model.decoder_weight.shape().to_vec();
        model.decoder_weight = checkpoint::find(tensors, "decoder.weight", &shape)?.clone();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.to_tensors(), path)
    }

    pub fn load(config: &AutoencoderConfig, bands: usize, path: &Path) -> Result<Self> {
        Self::from_tensors(config, bands, &checkpoint::load(path)?)
    }
}

/// Result of [`train_autoencoder`].
#[derive(Clone, Debug)]
pub struct TrainedAutoencoder {
    pub model: Autoencoder,
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceStack,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Adam on shuffled patch batches, clamping decoder weights at zero after
/// every step. Deterministic for a given configuration.
pub fn train_autoencoder(cube: &HsiCube, config: &AutoencoderConfig) -> Result<TrainedAutoencoder> {
    train_autoencoder_with(cube, config, |_, _| {})
}

/// [`train_autoencoder`] with a callback after each epoch receiving the
/// epoch index and the model.
pub fn train_autoencoder_with(
    cube: &HsiCube,
    config: &AutoencoderConfig,
    mut on_epoch: impl FnMut(usize, &Autoencoder),
) -> Result<TrainedAutoencoder> {
    let mut model = Autoencoder::new(config, cube.bands())?;
    if config.decoder_init == DecoderInit::Atgp {
        model.initialize_from(cube)?;
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let mut centers = patch_centers(cube.height(), cube.width(), config.train_stride);
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        centers.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in centers.chunks(config.batch_size) {
            let patches = patch_batch(cube, batch, config.patch_size);
            let loss = model.train_step(&mut adam, patches).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence {
                    stage: "autoencoder",
                    epoch,
                },
                e => e,
            })?;
            total += loss * batch.len() as f64;
        }
        let mean = total / centers.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                stage: "autoencoder",
                epoch,
            });
        }
        loss_history.push(mean);
        on_epoch(epoch, &model);
    }
    let endmembers = model.endmembers()?;
    let abundances = model.encode_cube(cube)?;
    Ok(TrainedAutoencoder {
        model,
        endmembers,
        abundances,
        loss_history,
    })
}
