//! Convolutional encoder/decoder pair for single frames and the feed-forward
//! classifier, all with seeded initialization.
//!
//! Encoder: `blocks` × [conv3×3 → conv3×3 → conv3×3 → batch norm → ReLU →
//! max-pool 2×2], flatten, then two parallel linear heads for the posterior
//! mean and the raw (log) standard deviation.
//!
//! Decoder: linear → reshape → `blocks` × [transposed conv (stride 2,
//! halves channels) → transposed conv → transposed conv → batch norm → ReLU]
//! → 1-channel transposed conv → sigmoid.
//!
//! Classifier: [linear → batch norm → ReLU] × 2 → linear → softmax, with
//! orthogonally initialized weights and zero biases.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{std_from_raw_derivative, GaussianPosterior};
use crate::nn::{BatchNorm, Conv2d, ConvTranspose2d, Linear, MaxPool2, Module, Param, Relu, Sigmoid, Tensor};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Side length of the square single-channel input.
    pub input_size: usize,
    pub blocks: usize,
    /// Output channels of each block.
    pub channel_schedule: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            blocks: 4,
            channel_schedule: vec![32, 64, 128, 256],
            latent_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("encoder: {msg}")));
        if self.blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.channel_schedule.len() != self.blocks {
            return bad(format!(
                "channel schedule has {} entries for {} blocks",
                self.channel_schedule.len(),
                self.blocks
            ));
        }
        if self.channel_schedule.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.channel_schedule.windows(2).any(|w| w[1] < w[0]) {
            return bad("channel schedule must be nondecreasing".into());
        }
        let factor = 1usize << self.blocks;
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return bad(format!(
                "input size {} is not divisible by 2^{} = {}",
                self.input_size, self.blocks, factor
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be positive".into());
        }
        Ok(())
    }

    /// `[channels, side, side]` of the map fed to the linear heads.
    pub fn feature_shape(&self) -> [usize; 3] {
        let side = self.input_size >> self.blocks;
        [*self.channel_schedule.last().unwrap_or(&1), side, side]
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape().iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub output_size: usize,
    pub blocks: usize,
    /// The paired encoder's schedule; the decoder walks it in reverse.
    pub channel_schedule: Vec<usize>,
    pub latent_dim: usize,
}

impl DecoderConfig {
    pub fn mirror(enc: &EncoderConfig) -> Self {
        Self {
            output_size: enc.input_size,
            blocks: enc.blocks,
            channel_schedule: enc.channel_schedule.clone(),
            latent_dim: enc.latent_dim,
        }
    }

    pub fn as_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            input_size: self.output_size,
            blocks: self.blocks,
            channel_schedule: self.channel_schedule.clone(),
            latent_dim: self.latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.as_encoder_config()
            .validate()
            .map_err(|e| Error::Config(format!("decoder mirrors an invalid encoder: {e}")))
    }

    pub fn check_pairs_with(&self, enc: &EncoderConfig) -> Result<()> {
        if *self != DecoderConfig::mirror(enc) {
            return Err(Error::Config(format!(
                "decoder {self:?} does not mirror encoder {enc:?}"
            )));
        }
        Ok(())
    }

    /// `(in, out)` channels of each decoder block.
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let rev: Vec<usize> = self.channel_schedule.iter().rev().copied().collect();
        (0..self.blocks)
            .map(|k| {
                let out = if k + 1 < self.blocks {
                    rev[k + 1]
                } else {
                    (rev[k] / 2).max(1)
                };
                (rev[k], out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub num_classes: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("classifier layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows (`rows <= cols`) or
/// orthonormal columns (`rows > cols`), from a seeded Gaussian draw.
pub fn orthogonal_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0x0127]);
    orthogonal_from_rng(rows, cols, &mut rng)
}

fn orthogonal_from_rng(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r vectors of length c, orthonormalized by two rounds of modified Gram–Schmidt.
    let mut vecs: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..r {
        for _ in 0..2 {
            for j in 0..i {
                let proj: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = vecs.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= proj * b;
                }
            }
        }
        let norm = vecs[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        vecs[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, x) in v.iter().enumerate() {
            if transpose {
                out[j * cols + i] = *x;
            } else {
                out[i * cols + j] = *x;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    convs: Vec<Conv2d>,
    bn: BatchNorm,
    relu: Relu,
    pool: MaxPool2,
}

/// Output of one encoder pass over a batch of frames.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[n, latent_dim]`
    pub mean: Tensor,
    /// `[n, latent_dim]`, log standard deviation before exponentiation.
    pub raw_std: Tensor,
}

impl EncoderOutput {
    pub fn posteriors(&self) -> Vec<GaussianPosterior> {
        (0..self.mean.n())
            .map(|i| {
                GaussianPosterior::from_raw(self.mean.item(i).to_vec(), self.raw_std.item(i))
                    .expect("encoder heads share the latent dimension")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    blocks: Vec<EncoderBlock>,
    mean_head: Linear,
    std_head: Linear,
}

pub fn build_encoder(cfg: &EncoderConfig, seed: u64) -> Result<Encoder> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &[0xE1C0]);
    let mut in_c = 1;
    let blocks = cfg
        .channel_schedule
        .iter()
        .enumerate()
        .map(|(k, &out_c)| {
            let convs = (0..3)
                .map(|j| {
                    let cin = if j == 0 { in_c } else { out_c };
                    Conv2d::new(&format!("enc.block{k}.conv{j}"), cin, out_c, &mut rng)
                })
                .collect();
            in_c = out_c;
            EncoderBlock {
                convs,
                bn: BatchNorm::new(&format!("enc.block{k}.bn"), out_c),
                relu: Relu::default(),
                pool: MaxPool2::default(),
            }
        })
        .collect();
    let feat = cfg.feature_len();
    Ok(Encoder {
        cfg: cfg.clone(),
        blocks,
        mean_head: Linear::new("enc.mean", feat, cfg.latent_dim, &mut rng),
        std_head: Linear::new("enc.log_std", feat, cfg.latent_dim, &mut rng),
    })
}

impl Encoder {
    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// `x`: `[n, 1, input_size, input_size]`.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> EncoderOutput {
        let s = self.cfg.input_size;
        assert_eq!(x.shape()[1..], [1, s, s], "encoder input shape");
        let mut h = x.clone();
        for block in &mut self.blocks {
            for conv in &mut block.convs {
                h = conv.forward(&h);
            }
            h = block.bn.forward(&h, train);
            h = block.relu.forward(&h);
            h = block.pool.forward(&h);
        }
        EncoderOutput {
            mean: self.mean_head.forward(&h),
            raw_std: self.std_head.forward(&h),
        }
    }

    /// Backpropagates gradients of the loss w.r.t. the mean and the raw
    /// standard-deviation outputs. Returns the input gradient when requested.
    pub fn backward(&mut self, d_mean: &Tensor, d_raw_std: Option<&Tensor>, need_input_grad: bool) -> Option<Tensor> {
        let mut g = self.mean_head.backward(d_mean, true).expect("input grad requested");
        if let Some(d_raw) = d_raw_std {
            let g2 = self.std_head.backward(d_raw, true).expect("input grad requested");
            g.data_mut().iter_mut().zip(g2.data()).for_each(|(a, b)| *a += b);
        }
        for (k, block) in self.blocks.iter_mut().enumerate().rev() {
            g = block.pool.backward(&g);
            g = block.relu.backward(&g);
            g = block.bn.backward(&g);
            for (j, conv) in block.convs.iter_mut().enumerate().rev() {
                let first = k == 0 && j == 0;
                if first && !need_input_grad {
                    conv.backward(&g, false);
                    return None;
                }
                g = conv.backward(&g, true).expect("input grad requested");
            }
        }
        Some(g)
    }

    /// Layer kinds in execution order.
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for _ in &self.blocks {
            out.extend(["conv", "conv", "conv", "batchnorm", "relu", "maxpool"]);
        }
        out.push("flatten");
        out.push("linear-heads");
        out
    }

    /// Posterior means and raw stds in inference mode (running batch-norm statistics).
    pub fn encode(&mut self, x: &Tensor) -> EncoderOutput {
        self.forward(x, false)
    }
}

impl Module for Encoder {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            b.convs.iter().for_each(|c| c.visit_params(f));
            b.bn.visit_params(f);
        }
        self.mean_head.visit_params(f);
        self.std_head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.convs.iter_mut().for_each(|c| c.visit_params_mut(f));
            b.bn.visit_params_mut(f);
        }
        self.mean_head.visit_params_mut(f);
        self.std_head.visit_params_mut(f);
    }
}

/// Turns `d loss / d std` into `d loss / d raw_std` through the floored exponential.
pub fn raw_std_grad(raw_std: &Tensor, d_std: &[f64]) -> Tensor {
    let data = raw_std
        .data()
        .iter()
        .zip(d_std)
        .map(|(r, g)| g * std_from_raw_derivative(*r))
        .collect();
    Tensor::from_vec(raw_std.shape(), data)
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    tconvs: Vec<ConvTranspose2d>,
    bn: BatchNorm,
    relu: Relu,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: DecoderConfig,
    fc: Linear,
    blocks: Vec<DecoderBlock>,
    out_conv: ConvTranspose2d,
    sigmoid: Sigmoid,
}

pub fn build_decoder(cfg: &DecoderConfig, seed: u64) -> Result<Decoder> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &[0xDEC0]);
    let enc = cfg.as_encoder_config();
    let fc = Linear::new("dec.fc", cfg.latent_dim, enc.feature_len(), &mut rng);
    let blocks: Vec<DecoderBlock> = cfg
        .block_channels()
        .into_iter()
        .enumerate()
        .map(|(k, (cin, cout))| DecoderBlock {
            tconvs: (0..3)
                .map(|j| {
                    let (i, stride) = if j == 0 { (cin, 2) } else { (cout, 1) };
                    ConvTranspose2d::new(&format!("dec.block{k}.tconv{j}"), i, cout, stride, &mut rng)
                })
                .collect(),
            bn: BatchNorm::new(&format!("dec.block{k}.bn"), cout),
            relu: Relu::default(),
        })
        .collect();
    let last = blocks.last().map(|b| b.bn.channels).unwrap_or(1);
    Ok(Decoder {
        cfg: cfg.clone(),
        fc,
        blocks,
        out_conv: ConvTranspose2d::new("dec.out", last, 1, 1, &mut rng),
        sigmoid: Sigmoid::default(),
    })
}

/// Encoder/decoder pair built from one seed with paired configs.
pub fn build_autoencoder(enc_cfg: &EncoderConfig, dec_cfg: &DecoderConfig, seed: u64) -> Result<(Encoder, Decoder)> {
    dec_cfg.check_pairs_with(enc_cfg)?;
    Ok((build_encoder(enc_cfg, seed)?, build_decoder(dec_cfg, seed)?))
}

impl Decoder {
    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// `z`: `[n, latent_dim]` → `[n, 1, size, size]` in `[0, 1]`.
    pub fn forward(&mut self, z: &Tensor, train: bool) -> Tensor {
        let [c, s, _] = self.cfg.as_encoder_config().feature_shape();
        let n = z.n();
        let mut h = self.fc.forward(z).reshape([n, c, s, s]);
        for block in &mut self.blocks {
            for t in &mut block.tconvs {
                h = t.forward(&h);
            }
            h = block.bn.forward(&h, train);
            h = block.relu.forward(&h);
        }
        h = self.out_conv.forward(&h);
        self.sigmoid.forward(&h)
    }

    /// Gradient w.r.t. the output image → gradient w.r.t. `z` (`[n, latent_dim]`).
    pub fn backward(&mut self, d_out: &Tensor) -> Tensor {
        let mut g = self.sigmoid.backward(d_out);
        g = self.out_conv.backward(&g, true).expect("input grad requested");
        for block in self.blocks.iter_mut().rev() {
            g = block.relu.backward(&g);
            g = block.bn.backward(&g);
            for t in block.tconvs.iter_mut().rev() {
                g = t.backward(&g, true).expect("input grad requested");
            }
        }
        let n = g.n();
        let g = g.reshape([n, self.fc.out_f, 1, 1]);
        self.fc.backward(&g, true).expect("input grad requested")
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        let mut out = vec!["linear", "reshape"];
        for _ in &self.blocks {
            out.extend(["tconv-up", "tconv", "tconv", "batchnorm", "relu"]);
        }
        out.extend(["tconv-out", "sigmoid"]);
        out
    }
}

impl Module for Decoder {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.fc.visit_params(f);
        for b in &self.blocks {
            b.tconvs.iter().for_each(|t| t.visit_params(f));
            b.bn.visit_params(f);
        }
        self.out_conv.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc.visit_params_mut(f);
        for b in &mut self.blocks {
            b.tconvs.iter_mut().for_each(|t| t.visit_params_mut(f));
            b.bn.visit_params_mut(f);
        }
        self.out_conv.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    cfg: ClassifierConfig,
    fc1: Linear,
    bn1: BatchNorm,
    relu1: Relu,
    fc2: Linear,
    bn2: BatchNorm,
    relu2: Relu,
    fc3: Linear,
}

pub fn build_classifier(cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    cfg.validate()?;
    let mut rng = rng_for(seed, &[0xC1A5]);
    let dims = [cfg.input_dim, cfg.hidden_dims[0], cfg.hidden_dims[1], cfg.num_classes];
    let mut layer = |k: usize| {
        let (i, o) = (dims[k], dims[k + 1]);
        let mut lin = Linear::new(&format!("cls.fc{}", k + 1), i, o, &mut rng);
        lin.weight.value = orthogonal_from_rng(o, i, &mut rng);
        lin.bias.value.iter_mut().for_each(|b| *b = 0.0);
        lin
    };
    let (fc1, fc2, fc3) = (layer(0), layer(1), layer(2));
    Ok(Classifier {
        cfg: cfg.clone(),
        fc1,
        bn1: BatchNorm::new("cls.bn1", dims[1]),
        relu1: Relu::default(),
        fc2,
        bn2: BatchNorm::new("cls.bn2", dims[2]),
        relu2: Relu::default(),
        fc3,
    })
}

/// Row-wise softmax of a `[n, k]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.item_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

impl Classifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    /// Pre-softmax scores `[n, num_classes]`.
    pub fn logits(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.fc1.forward(x);
        h = self.bn1.forward(&h, train);
        h = self.relu1.forward(&h);
        h = self.fc2.forward(&h);
        h = self.bn2.forward(&h, train);
        h = self.relu2.forward(&h);
        self.fc3.forward(&h)
    }

    /// Class probabilities `[n, num_classes]`.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        softmax(&self.logits(x, train))
    }

    /// Gradient w.r.t. the logits → gradient w.r.t. the input features.
    pub fn backward(&mut self, d_logits: &Tensor) -> Tensor {
        let mut g = self.fc3.backward(d_logits, true).expect("input grad requested");
        g = self.relu2.backward(&g);
        g = self.bn2.backward(&g);
        g = self.fc2.backward(&g, true).expect("input grad requested");
        g = self.relu1.backward(&g);
        g = self.bn1.backward(&g);
        self.fc1.backward(&g, true).expect("input grad requested")
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        vec!["linear", "batchnorm", "relu", "linear", "batchnorm", "relu", "linear", "softmax"]
    }

    /// Weight matrices of the three linear layers, `[out, in]` row-major.
    pub fn weights(&self) -> [(&[f64], usize, usize); 3] {
        [
            (&self.fc1.weight.value, self.fc1.out_f, self.fc1.in_f),
            (&self.fc2.weight.value, self.fc2.out_f, self.fc2.in_f),
            (&self.fc3.weight.value, self.fc3.out_f, self.fc3.in_f),
        ]
    }
}

impl Module for Classifier {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.fc1.visit_params(f);
        self.bn1.visit_params(f);
        self.fc2.visit_params(f);
        self.bn2.visit_params(f);
        self.fc3.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        self.fc3.visit_params_mut(f);
    }
}
