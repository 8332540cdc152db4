//! The MixMatch pipeline: K-augmentation pseudo-labels, temperature
//! sharpening, MixUp batch construction and the composite semi-supervised
//! objective `L = CE(labelled) + γ·r(t)·MSE(unlabelled)`.

use crate::augment::{k_augmentations, sample_transform, apply_transform};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// MixMatch hyper-parameters.
#[derive(Debug, Clone)]
pub struct MixMatchConfig {
    /// Augmentations per unlabelled observation.
    pub k: usize,
    /// Sharpening temperature ρ.
    pub temperature: f64,
    /// MixUp Beta(α, α) parameter.
    pub alpha: f64,
    /// Weight γ of the unlabelled loss term.
    pub gamma: f64,
    /// Denominator of the ramp-up r(t) = min(t / horizon, 1).
    pub rampup_horizon: f64,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        Self { k: 2, temperature: 0.5, alpha: 0.75, gamma: 100.0, rampup_horizon: 3000.0 }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config(format!("K must be ≥ 1; got {}", self.k)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be > 0; got {}",
                self.temperature
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be > 0; got {}", self.alpha)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be ≥ 0; got {}", self.gamma)));
        }
        if self.rampup_horizon <= 0.0 {
            return Err(Error::Config(format!(
                "rampup_horizon must be > 0; got {}",
                self.rampup_horizon
            )));
        }
        Ok(())
    }
}

/// Output of MixUp: the mixed labelled part and the K-expanded mixed
/// pseudo-labelled part. Every soft label row sums to 1.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub labeled: Vec<(Tensor, Vec<f64>)>,
    pub unlabeled: Vec<(Tensor, Vec<f64>)>,
}

/// The loss graph of one training step: backward on `loss`, then read
/// parameter gradients through `param_vars` (aligned with the model's
/// tensor order).
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub param_vars: Vec<Var>,
}

impl LossGraph {
    /// Convenience: runs backward and returns per-tensor gradients.
    pub fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        self.tape.backward(self.loss)?;
        Ok(self.param_vars.iter().map(|v| self.tape.grad(*v).to_vec()).collect())
    }
}

/// Element-wise average of probability rows.
pub fn average_rows(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Contract("cannot average zero rows".into()))?;
    let mut out = vec![0.0; first.len()];
    for row in rows {
        if row.len() != first.len() {
            return Err(Error::Dimension(format!(
                "rows of lengths {} and {} cannot be averaged",
                first.len(),
                row.len()
            )));
        }
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Pseudo-label from explicitly supplied augmented views: the model's frozen
/// forward is averaged across them. No gradients are recorded.
pub fn pseudo_label_from(params: &ModelParams, augmented: &[Tensor]) -> Result<Vec<f64>> {
    let views: Vec<&Tensor> = augmented.iter().collect();
    let rows = params.infer(&views)?;
    average_rows(&rows)
}

/// Pseudo-label `ŷ = (1/K)·Σ_η f_w(Ψ^η(x))` with freshly sampled transforms.
pub fn pseudo_label(
    params: &ModelParams,
    x: &Tensor,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let augmented = k_augmentations(x, k, rng)?;
    pseudo_label_from(params, &augmented)
}

/// Temperature sharpening: `ỹ_i = y_i^{1/ρ} / Σ_j y_j^{1/ρ}`.
pub fn sharpen(y: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "sharpening temperature must be > 0; got {temperature}"
        )));
    }
    let inv = 1.0 / temperature;
    let powered: Vec<f64> = y.iter().map(|&v| v.max(0.0).powf(inv)).collect();
    let sum: f64 = powered.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::Contract(format!(
            "cannot sharpen a row with no positive mass: {y:?}"
        )));
    }
    Ok(powered.into_iter().map(|v| v / sum).collect())
}

/// Draws λ ~ Beta(α, α) and returns λ' = max(λ, 1−λ) ∈ [0.5, 1].
pub fn sample_mixup_lambda(alpha: f64, rng: &mut impl Rng) -> f64 {
    let beta = Beta::new(alpha, alpha).expect("alpha validated > 0");
    let lambda: f64 = beta.sample(rng);
    lambda.max(1.0 - lambda)
}

/// Convex combination of two (image, soft label) pairs, dominated by the
/// first: `x' = λ'·x_a + (1−λ')·x_b`, same for labels.
pub fn mixup_pair(
    a: (&Tensor, &[f64]),
    b: (&Tensor, &[f64]),
    lambda: f64,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.5..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!("λ' must lie in [0.5, 1]; got {lambda}")));
    }
    if a.0.shape() != b.0.shape() || a.1.len() != b.1.len() {
        return Err(Error::Dimension(format!(
            "mixup_pair got images {:?} vs {:?} and labels of {} vs {} entries",
            a.0.shape(),
            b.0.shape(),
            a.1.len(),
            b.1.len()
        )));
    }
    if lambda == 1.0 {
        return Ok((a.0.clone(), a.1.to_vec()));
    }
    let image = Tensor::new(
        a.0.shape(),
        a.0.values()
            .iter()
            .zip(b.0.values())
            .map(|(&xa, &xb)| lambda * xa + (1.0 - lambda) * xb)
            .collect(),
    )?;
    let label = a
        .1
        .iter()
        .zip(b.1)
        .map(|(&ya, &yb)| lambda * ya + (1.0 - lambda) * yb)
        .collect();
    Ok((image, label))
}

/// Ramp-up factor `r = min(t / horizon, 1)` of the unlabelled loss weight.
pub fn ramp_up(step: usize, horizon: f64) -> f64 {
    (step as f64 / horizon).min(1.0)
}

/// Assembles one MixMatch batch:
/// 1. labelled observations each get one sampled augmentation; unlabelled
///    observations get K, pseudo-labelled via the frozen model and sharpened;
/// 2. both parts concatenate into a shuffled partner pool;
/// 3. every entry is MixUp'd against its pool partner with a fresh λ'.
pub fn build_mixed_batch(
    params: &ModelParams,
    labeled: &[(&Tensor, Vec<f64>)],
    unlabeled: &[&Tensor],
    config: &MixMatchConfig,
    rng: &mut impl Rng,
) -> Result<MixedBatch> {
    config.validate()?;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::Contract(format!(
            "build_mixed_batch needs non-empty parts; got {} labelled, {} unlabelled",
            labeled.len(),
            unlabeled.len()
        )));
    }

    // Unlabelled side: K augmentations each, one shared sharpened target.
    let mut expanded_images: Vec<Tensor> = Vec::with_capacity(config.k * unlabeled.len());
    for x in unlabeled {
        expanded_images.extend(k_augmentations(x, config.k, rng)?);
    }
    let views: Vec<&Tensor> = expanded_images.iter().collect();
    let rows = params.infer(&views)?;
    let mut expanded_targets: Vec<Vec<f64>> = Vec::with_capacity(expanded_images.len());
    for chunk in rows.chunks(config.k) {
        let sharpened = sharpen(&average_rows(&chunk.to_vec())?, config.temperature)?;
        for _ in 0..config.k {
            expanded_targets.push(sharpened.clone());
        }
    }

    // Labelled side: one augmentation each, label kept.
    let mut originals: Vec<(Tensor, Vec<f64>)> = Vec::with_capacity(labeled.len() + expanded_images.len());
    for (x, y) in labeled {
        originals.push((apply_transform(sample_transform(rng), x)?, y.clone()));
    }
    originals.extend(expanded_images.into_iter().zip(expanded_targets));

    // Partner pool: the same entries in shuffled order.
    let mut pool: Vec<usize> = (0..originals.len()).collect();
    pool.shuffle(rng);

    let mut mixed = Vec::with_capacity(originals.len());
    for (m, &partner) in pool.iter().enumerate() {
        let lambda = sample_mixup_lambda(config.alpha, rng);
        let (xa, ya) = &originals[m];
        let (xb, yb) = &originals[partner];
        mixed.push(mixup_pair((xa, ya), (xb, yb), lambda)?);
    }
    let unlabeled_part = mixed.split_off(labeled.len());
    Ok(MixedBatch { labeled: mixed, unlabeled: unlabeled_part })
}

/// Shared loss assembly: cross-entropy on the labelled part plus
/// `γ·r` × mean squared distance on the unlabelled part, with optional
/// per-row weights on either term (the balance-corrected variant).
pub(crate) fn assemble_loss(
    params: &mut ModelParams,
    mixed: &MixedBatch,
    gamma: f64,
    r: f64,
    labeled_weights: Option<Vec<f64>>,
    unlabeled_weights: Option<Vec<f64>>,
) -> Result<LossGraph> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Contract(format!("ramp-up r must lie in [0, 1]; got {r}")));
    }
    if mixed.labeled.is_empty() {
        return Err(Error::Contract("mixed batch has no labelled part".into()));
    }
    let mut tape = Tape::new();
    let param_vars = params.bind(&mut tape);

    let bind_part = |tape: &mut Tape, part: &[(Tensor, Vec<f64>)]| -> Result<(Var, Var)> {
        let shape = part[0].0.shape();
        let classes = part[0].1.len();
        let mut images = Vec::with_capacity(part.len() * part[0].0.len());
        let mut targets = Vec::with_capacity(part.len() * classes);
        for (x, y) in part {
            images.extend_from_slice(x.values());
            targets.extend_from_slice(y);
        }
        let mut batch_shape = vec![part.len()];
        batch_shape.extend_from_slice(shape);
        let x = tape.constant(&batch_shape, images);
        let t = tape.constant(&[part.len(), classes], targets);
        Ok((x, t))
    };

    let (x_l, t_l) = bind_part(&mut tape, &mixed.labeled)?;
    let probs_l = params.forward_training(&mut tape, &param_vars, x_l)?;
    let ce = match labeled_weights {
        Some(w) => tape.cross_entropy_weighted(t_l, probs_l, w)?,
        None => tape.cross_entropy(t_l, probs_l)?,
    };

    let factor = gamma * r;
    let loss = if factor > 0.0 && !mixed.unlabeled.is_empty() {
        let (x_u, t_u) = bind_part(&mut tape, &mixed.unlabeled)?;
        let probs_u = params.forward_training(&mut tape, &param_vars, x_u)?;
        let mse = match unlabeled_weights {
            Some(w) => tape.mse_distance_weighted(t_u, probs_u, w)?,
            None => tape.mse_distance(t_u, probs_u)?,
        };
        let scaled = tape.scale(mse, factor);
        tape.add(ce, scaled)?
    } else {
        ce
    };
    Ok(LossGraph { tape, loss, param_vars })
}

/// The plain MixMatch objective `CE(S'_l) + γ·r·MSE(S̃'_u)`.
pub fn mixmatch_loss_unweighted(
    params: &mut ModelParams,
    mixed: &MixedBatch,
    gamma: f64,
    r: f64,
) -> Result<LossGraph> {
    assemble_loss(params, mixed, gamma, r, None, None)
}
