//! Small configurable CNN classifier: conv stages (each convolution,
//! per-channel normalization, relu), global average pooling and a dense head
//! ending in softmax probabilities.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// One convolution stage; padding is `kernel / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Pixels per side of the (square) input.
    pub input_size: usize,
    /// Input channels; images are replicated to 3 at load time.
    pub channels: usize,
    pub conv_stages: Vec<ConvStage>,
    /// Width of an optional extra dense layer between pooling and the head;
    /// 0 means the pooled features feed the class head directly.
    pub hidden_units: usize,
    pub num_classes: usize,
    /// When set, evaluation normalizes with running statistics accumulated
    /// during training instead of per-sample statistics.
    pub use_running_stats: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 110,
            channels: 3,
            conv_stages: vec![
                ConvStage { out_channels: 8, kernel: 3, stride: 2 },
                ConvStage { out_channels: 16, kernel: 3, stride: 2 },
                ConvStage { out_channels: 32, kernel: 3, stride: 2 },
            ],
            hidden_units: 0,
            num_classes: 2,
            use_running_stats: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale variant of the default architecture.
    pub fn with_input_size(input_size: usize) -> Self {
        Self { input_size, ..Self::default() }
    }

    /// Spatial side length after each stage; errors if any stage collapses
    /// the feature map below 1×1.
    pub fn spatial_trace(&self) -> Result<Vec<usize>> {
        let mut side = self.input_size;
        let mut trace = Vec::with_capacity(self.conv_stages.len());
        for (i, stage) in self.conv_stages.iter().enumerate() {
            if stage.stride == 0 || stage.kernel == 0 {
                return Err(Error::Config(format!(
                    "conv stage {i} has zero kernel or stride"
                )));
            }
            let padded = side + 2 * (stage.kernel / 2);
            if padded < stage.kernel {
                return Err(Error::Config(format!(
                    "conv stage {i} kernel {} exceeds padded input {padded}",
                    stage.kernel
                )));
            }
            side = (padded - stage.kernel) / stage.stride + 1;
            if side < 1 {
                return Err(Error::Config(format!(
                    "conv stage {i} collapses the feature map to zero size"
                )));
            }
            trace.push(side);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be ≥ 2; got {}",
                self.num_classes
            )));
        }
        if self.channels < 1 {
            return Err(Error::Config("channels must be ≥ 1".into()));
        }
        if self.input_size < 1 {
            return Err(Error::Config("input_size must be ≥ 1".into()));
        }
        if self.conv_stages.is_empty() {
            return Err(Error::Config("at least one conv stage is required".into()));
        }
        self.spatial_trace()?;
        Ok(())
    }
}

/// Exponential-moving-average statistics for one normalization layer.
#[derive(Debug, Clone)]
struct RunningStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

const RUNNING_MOMENTUM: f64 = 0.1;

/// All weights of the network plus normalization statistics. Entry order is
/// fixed by the config, so `(config, seed)` fully determines the instance.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    running: Vec<RunningStats>,
}

/// How a forward pass treats normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StatsMode {
    /// Per-sample statistics with gradients flowing through them.
    Instance,
    /// Running statistics treated as constants (only differs from
    /// `Instance` when the config enables running stats).
    Frozen,
}

impl ModelParams {
    /// He-style initialization: zero biases, unit gains, Gaussian kernels and
    /// dense weights scaled by `sqrt(2 / fan_in)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut running = Vec::new();
        let he = |rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let n: usize = shape.iter().product();
            let values: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            Tensor::new(shape, values).expect("shape matches values")
        };

        let mut in_channels = config.channels;
        for (i, stage) in config.conv_stages.iter().enumerate() {
            let fan_in = in_channels * stage.kernel * stage.kernel;
            let kernel_shape = [stage.out_channels, in_channels, stage.kernel, stage.kernel];
            names.push(format!("conv{i}.kernel"));
            tensors.push(he(&mut rng, &kernel_shape, fan_in).with_requires_grad(true));
            names.push(format!("norm{i}.gain"));
            tensors.push(Tensor::filled(&[stage.out_channels], 1.0).with_requires_grad(true));
            names.push(format!("norm{i}.bias"));
            tensors.push(Tensor::zeros(&[stage.out_channels]).with_requires_grad(true));
            running.push(RunningStats {
                mean: vec![0.0; stage.out_channels],
                var: vec![1.0; stage.out_channels],
            });
            in_channels = stage.out_channels;
        }

        let features = in_channels;
        if config.hidden_units > 0 {
            names.push("hidden.w".into());
            tensors.push(
                he(&mut rng, &[features, config.hidden_units], features).with_requires_grad(true),
            );
            names.push("hidden.b".into());
            tensors.push(Tensor::zeros(&[config.hidden_units]).with_requires_grad(true));
        }
        let head_in = if config.hidden_units > 0 { config.hidden_units } else { features };
        names.push("head.w".into());
        tensors.push(he(&mut rng, &[head_in, config.num_classes], head_in).with_requires_grad(true));
        names.push("head.b".into());
        tensors.push(Tensor::zeros(&[config.num_classes]).with_requires_grad(true));

        Ok(Self { config: config.clone(), names, tensors, running })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a gradient-tracked leaf, in entry order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let s = self.config.input_size;
        let expected = [self.config.channels, s, s];
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::Dimension(format!(
                "model expects input [n, {}, {s}, {s}]; got {shape:?}",
                self.config.channels
            )));
        }
        Ok(())
    }

    /// Builds the forward graph, returning the softmax output and each conv
    /// stage's pre-normalization activation (for statistics updates).
    fn build_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mode: StatsMode,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape, x)?;
        let mut idx = 0;
        let mut next = || {
            let v = vars[idx];
            idx += 1;
            v
        };
        let mut h = x;
        let mut conv_outputs = Vec::with_capacity(self.config.conv_stages.len());
        for (i, stage) in self.config.conv_stages.iter().enumerate() {
            let kernel = next();
            let gain = next();
            let bias = next();
            h = tape.conv2d(h, kernel, stage.stride, stage.kernel / 2)?;
            conv_outputs.push(h);
            let stats = match mode {
                StatsMode::Frozen if self.config.use_running_stats => {
                    Some((self.running[i].mean.as_slice(), self.running[i].var.as_slice()))
                }
                _ => None,
            };
            h = tape.channel_norm(h, gain, bias, stats)?;
            h = tape.relu(h);
        }
        let mut features = tape.global_avg_pool(h)?;
        if self.config.hidden_units > 0 {
            let w = next();
            let b = next();
            features = tape.dense(features, w, b)?;
            features = tape.relu(features);
        }
        let w = next();
        let b = next();
        let logits = tape.dense(features, w, b)?;
        let probs = tape.softmax(logits)?;
        Ok((probs, conv_outputs))
    }

    /// Training forward: per-sample normalization statistics; when the config
    /// enables running statistics they are EMA-updated from this batch.
    pub fn forward_training(&mut self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (probs, conv_outputs) = self.build_forward(tape, vars, x, StatsMode::Instance)?;
        if self.config.use_running_stats {
            for (stage, conv) in conv_outputs.iter().enumerate() {
                let shape = tape.shape(*conv).to_vec();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let values = tape.values(*conv);
                let per_channel = (n * h * w) as f64;
                for ch in 0..c {
                    let mut sum = 0.0;
                    let mut sum_sq = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * h * w;
                        for &v in &values[off..off + h * w] {
                            sum += v;
                            sum_sq += v * v;
                        }
                    }
                    let mean = sum / per_channel;
                    let var = (sum_sq / per_channel - mean * mean).max(0.0);
                    let stats = &mut self.running[stage];
                    stats.mean[ch] = (1.0 - RUNNING_MOMENTUM) * stats.mean[ch] + RUNNING_MOMENTUM * mean;
                    stats.var[ch] = (1.0 - RUNNING_MOMENTUM) * stats.var[ch] + RUNNING_MOMENTUM * var;
                }
            }
        }
        Ok(probs)
    }

    /// Evaluation/pseudo-labelling forward: statistics are frozen — running
    /// values when configured, otherwise per-sample (which is already a pure
    /// function of the input).
    pub fn forward_frozen(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        Ok(self.build_forward(tape, vars, x, StatsMode::Frozen)?.0)
    }

    /// No-gradient inference: probability rows for a batch of images.
    pub fn infer(&self, images: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let s = self.config.input_size;
        let c = self.config.channels;
        let mut batch = Vec::with_capacity(images.len() * c * s * s);
        for img in images {
            if img.shape() != [c, s, s] {
                return Err(Error::Dimension(format!(
                    "model expects images of shape [{c}, {s}, {s}]; got {:?}",
                    img.shape()
                )));
            }
            batch.extend_from_slice(img.values());
        }
        let mut tape = Tape::new();
        // Parameters enter as constants: no gradients recorded anywhere.
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.shape(), t.values().to_vec()))
            .collect();
        let x = tape.constant(&[images.len(), c, s, s], batch);
        let probs = self.forward_frozen(&mut tape, &vars, x)?;
        let k = self.config.num_classes;
        Ok(tape.values(probs).chunks(k).map(|row| row.to_vec()).collect())
    }

    /// Writes a plain-text header line (`name:dims ...`) followed by all
    /// values as little-endian doubles. Running statistics are included as
    /// `normN.running_mean` / `normN.running_var` entries.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            entries.push((name.clone(), tensor.shape().to_vec(), tensor.values()));
        }
        for (i, stats) in self.running.iter().enumerate() {
            entries.push((format!("norm{i}.running_mean"), vec![stats.mean.len()], &stats.mean));
            entries.push((format!("norm{i}.running_var"), vec![stats.var.len()], &stats.var));
        }
        let header: Vec<String> = entries
            .iter()
            .map(|(name, shape, _)| {
                let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                format!("{name}:{}", dims.join("x"))
            })
            .collect();
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", header.join(" "))?;
        for (_, _, values) in &entries {
            for v in *values {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint written by [`save_checkpoint`]; the header must
    /// match the layout implied by `config` exactly.
    pub fn load_checkpoint(config: &ModelConfig, path: &Path) -> Result<Self> {
        let mut skeleton = Self::init(config, 0)?;
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        for (name, tensor) in skeleton.names.iter().zip(&skeleton.tensors) {
            expected.push((name.clone(), tensor.shape().to_vec()));
        }
        for (i, stats) in skeleton.running.iter().enumerate() {
            expected.push((format!("norm{i}.running_mean"), vec![stats.mean.len()]));
            expected.push((format!("norm{i}.running_var"), vec![stats.var.len()]));
        }
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != expected.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors; config implies {}",
                tokens.len(),
                expected.len()
            )));
        }
        for (token, (name, shape)) in tokens.iter().zip(&expected) {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let want = format!("{name}:{}", dims.join("x"));
            if *token != want {
                return Err(Error::Config(format!(
                    "checkpoint entry `{token}` does not match expected `{want}`"
                )));
            }
        }
        let mut read_values = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            reader.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect())
        };
        for i in 0..skeleton.tensors.len() {
            let values = read_values(skeleton.tensors[i].len())?;
            let shape = skeleton.tensors[i].shape().to_vec();
            skeleton.tensors[i] =
                Tensor::new(&shape, values)?.with_requires_grad(true);
        }
        for i in 0..skeleton.running.len() {
            skeleton.running[i].mean = read_values(skeleton.running[i].mean.len())?;
            skeleton.running[i].var = read_values(skeleton.running[i].var.len())?;
        }
        Ok(skeleton)
    }
}
