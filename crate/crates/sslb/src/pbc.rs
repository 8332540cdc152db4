//! Balance correction for imbalanced labelled sets: normalized
//! inverse-frequency class weights, selected per observation by the argmax of
//! its (soft) label row and applied to both terms of the objective.

use crate::error::{Error, Result};
use crate::mixmatch::{assemble_loss, LossGraph, MixedBatch};
use crate::model::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Normalized inverse-frequency weights `c_i = (1/n_i) / Σ_j (1/n_j)`.
///
/// Evaluated as a ratio of integer products, so count vectors with equal
/// ratios produce bit-identical weights (exact scale invariance).
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Config("class_weights needs at least one class".into()));
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!(
            "class {i} has no labelled observations, so its weight is undefined"
        )));
    }
    if let Some(weights) = integer_weights(counts) {
        return Ok(weights);
    }
    // Integer products overflowed (astronomical counts): harmonic fallback.
    let inverse: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
    let sum: f64 = inverse.iter().sum();
    Ok(inverse.into_iter().map(|v| v / sum).collect())
}

/// `c_i` as the exact rational `Π_{j≠i} n_j / Σ_k Π_{j≠k} n_j`; one correctly
/// rounded division per class keeps ratio-equal inputs bit-identical.
fn integer_weights(counts: &[usize]) -> Option<Vec<f64>> {
    let mut numerators: Vec<u128> = Vec::with_capacity(counts.len());
    for i in 0..counts.len() {
        let mut product: u128 = 1;
        for (j, &n) in counts.iter().enumerate() {
            if j != i {
                product = product.checked_mul(n as u128)?;
            }
        }
        numerators.push(product);
    }
    let mut denominator: u128 = 0;
    for &n in &numerators {
        denominator = denominator.checked_add(n)?;
    }
    if denominator > (1u128 << 53) || numerators.iter().any(|&n| n > (1u128 << 53)) {
        return None;
    }
    Some(numerators.into_iter().map(|n| n as f64 / denominator as f64).collect())
}

/// Index of the largest entry; ties resolve toward the lower index.
pub fn label_to_index(y: &[f64]) -> usize {
    debug_assert!(!y.is_empty(), "label rows are never empty");
    let mut best = 0;
    for (i, &v) in y.iter().enumerate().skip(1) {
        if v > y[best] {
            best = i;
        }
    }
    best
}

/// Per-row weight `c_b` (or `c²_b`) selected by each target row's argmax.
fn selection_weights(tape: &Tape, target: Var, c: &[f64], squared: bool) -> Result<Vec<f64>> {
    let shape = tape.shape(target);
    if shape.len() != 2 || shape[1] != c.len() {
        return Err(Error::Dimension(format!(
            "target of shape {shape:?} does not match {} class weights",
            c.len()
        )));
    }
    Ok(tape
        .values(target)
        .chunks(c.len())
        .map(|row| {
            let w = c[label_to_index(row)];
            if squared {
                w * w
            } else {
                w
            }
        })
        .collect())
}

/// Labelled term: mean over the batch of `c_b · CE(y, f)`.
pub fn weighted_labeled_loss(tape: &mut Tape, target: Var, pred: Var, c: &[f64]) -> Result<Var> {
    let weights = selection_weights(tape, target, c, false)?;
    tape.cross_entropy_weighted(target, pred, weights)
}

/// Unlabelled term: mean over the batch of `‖c_b·(ỹ − f)‖² = c²_b·‖ỹ − f‖²`.
/// Selection precedes scaling, so weighting never changes which class won.
pub fn weighted_unlabeled_loss(tape: &mut Tape, target: Var, pred: Var, c: &[f64]) -> Result<Var> {
    let weights = selection_weights(tape, target, c, true)?;
    tape.mse_distance_weighted(target, pred, weights)
}

/// Reference form of the labelled term feeding `c_b·y` and `c_b·f` straight
/// into unnormalized cross-entropy. It exceeds [`weighted_labeled_loss`] by
/// the parameter-free offset `−mean(c_b·ln c_b)`, so parameter gradients
/// agree exactly; kept as the oracle that licenses the implemented form.
pub fn literal_weighted_labeled_loss(
    tape: &mut Tape,
    target: Var,
    pred: Var,
    c: &[f64],
) -> Result<Var> {
    let weights = selection_weights(tape, target, c, false)?;
    let scaled_target_values: Vec<f64> = tape
        .values(target)
        .chunks(c.len())
        .zip(&weights)
        .flat_map(|(row, &w)| row.iter().map(move |&v| w * v).collect::<Vec<f64>>())
        .collect();
    let shape = tape.shape(target).to_vec();
    let scaled_target = tape.constant(&shape, scaled_target_values);
    let scaled_pred = tape.row_scale(pred, weights)?;
    tape.cross_entropy_raw(scaled_target, scaled_pred)
}

fn validate_weight_vector(c: &[f64], classes: usize) -> Result<()> {
    if c.len() != classes {
        return Err(Error::Config(format!(
            "{} class weights given for {classes} classes",
            c.len()
        )));
    }
    if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(format!("class weights must be finite and ≥ 0: {c:?}")));
    }
    let sum: f64 = c.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("class weights must sum to 1; got {sum}")));
    }
    Ok(())
}

fn part_weights(part: &[(Tensor, Vec<f64>)], c: &[f64], squared: bool) -> Result<Vec<f64>> {
    part.iter()
        .map(|(_, y)| {
            if y.len() != c.len() {
                return Err(Error::Dimension(format!(
                    "label row of {} entries does not match {} class weights",
                    y.len(),
                    c.len()
                )));
            }
            let w = c[label_to_index(y)];
            Ok(if squared { w * w } else { w })
        })
        .collect()
}

/// Balance-corrected composite objective:
/// `mean(c_b·CE) + γ·r·mean(c²_b·‖ỹ − f‖²)`.
pub fn pbc_mixmatch_loss(
    params: &mut ModelParams,
    mixed: &MixedBatch,
    c: &[f64],
    gamma: f64,
    r: f64,
) -> Result<LossGraph> {
    validate_weight_vector(c, params.config().num_classes)?;
    let labeled_weights = part_weights(&mixed.labeled, c, false)?;
    let unlabeled_weights = part_weights(&mixed.unlabeled, c, true)?;
    assemble_loss(params, mixed, gamma, r, Some(labeled_weights), Some(unlabeled_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixmatch::{build_mixed_batch, mixmatch_loss_unweighted, MixMatchConfig};
    use crate::model::{ModelConfig, ModelParams};
    use crate::tape::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn class_weights_oracles() {
        assert_eq!(class_weights(&[50, 50]).unwrap(), vec![0.5, 0.5]);
        let w = class_weights(&[80, 20]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 0.8).abs() < 1e-12);
        let w = class_weights(&[16, 4]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 0.8).abs() < 1e-12);
        let w = class_weights(&[1, 2, 4]).unwrap();
        assert!((w[0] - 4.0 / 7.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 7.0).abs() < 1e-15);
        assert!((w[2] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn class_weights_sum_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..200 {
            let counts: Vec<usize> = (0..rng.gen_range(2..5)).map(|_| rng.gen_range(1..300)).collect();
            let w = class_weights(&counts).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{counts:?} -> {w:?}");
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if counts[i] > counts[j] {
                        assert!(w[i] < w[j], "{counts:?} -> {w:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn class_weights_scale_invariant_bitwise() {
        let base = class_weights(&[80, 20]).unwrap();
        for k in 1..=10 {
            assert_eq!(class_weights(&[80 * k, 20 * k]).unwrap(), base);
        }
        let base3 = class_weights(&[3, 5, 7]).unwrap();
        for k in 1..=10 {
            assert_eq!(class_weights(&[3 * k, 5 * k, 7 * k]).unwrap(), base3);
        }
    }

    #[test]
    fn class_weights_rejects_zero_counts() {
        assert!(matches!(class_weights(&[5, 0]), Err(Error::Config(_))));
        assert!(matches!(class_weights(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn label_index_cases() {
        assert_eq!(label_to_index(&[1.0, 0.0]), 0);
        assert_eq!(label_to_index(&[0.3, 0.7]), 1);
        assert_eq!(label_to_index(&[0.5, 0.5]), 0);
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let expected = if p >= 0.5 { 0 } else { 1 };
            assert_eq!(label_to_index(&[p, 1.0 - p]), expected, "p = {p}");
        }
    }

    #[test]
    fn weighted_labeled_closed_forms() {
        let c = [0.2, 0.8];
        let mut tape = Tape::new();
        let t = tape.constant(&[1, 2], vec![1.0, 0.0]);
        let p = tape.constant(&[1, 2], vec![0.5, 0.5]);
        let loss = weighted_labeled_loss(&mut tape, t, p, &c).unwrap();
        assert!((tape.scalar_value(loss) - 0.2 * 2f64.ln()).abs() < 1e-12);
        assert!((tape.scalar_value(loss) - 0.1386).abs() < 1e-4);

        let mut tape = Tape::new();
        let t = tape.constant(&[1, 2], vec![0.0, 1.0]);
        let p = tape.constant(&[1, 2], vec![0.5, 0.5]);
        let loss = weighted_labeled_loss(&mut tape, t, p, &c).unwrap();
        assert!((tape.scalar_value(loss) - 0.8 * 2f64.ln()).abs() < 1e-12);
        assert!((tape.scalar_value(loss) - 0.5545).abs() < 1e-4);
    }

    #[test]
    fn uniform_weights_factor_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 5;
        let mut targets = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..n {
            targets.extend(crate::tensor::one_hot(rng.gen_range(0..2), 2));
            let a: f64 = rng.gen_range(0.05..0.95);
            preds.extend([a, 1.0 - a]);
        }
        let mut tape = Tape::new();
        let t = tape.constant(&[n, 2], targets);
        let p = tape.constant(&[n, 2], preds);
        let weighted = weighted_labeled_loss(&mut tape, t, p, &[0.5, 0.5]).unwrap();
        let plain = tape.cross_entropy(t, p).unwrap();
        let half = 0.5 * tape.scalar_value(plain);
        assert!((tape.scalar_value(weighted) - half).abs() < 1e-12);

        let weighted_mse = weighted_unlabeled_loss(&mut tape, t, p, &[0.5, 0.5]).unwrap();
        let plain_mse = tape.mse_distance(t, p).unwrap();
        let quarter = 0.25 * tape.scalar_value(plain_mse);
        assert!((tape.scalar_value(weighted_mse) - quarter).abs() < 1e-12);
    }

    #[test]
    fn weighted_unlabeled_closed_forms() {
        let c = [0.2, 0.8];
        let mut tape = Tape::new();
        let t = tape.constant(&[1, 2], vec![1.0, 0.0]);
        let p = tape.constant(&[1, 2], vec![0.0, 1.0]);
        let loss = weighted_unlabeled_loss(&mut tape, t, p, &c).unwrap();
        assert!((tape.scalar_value(loss) - 0.08).abs() < 1e-12);

        let mut tape = Tape::new();
        let t = tape.constant(&[2, 2], vec![0.7, 0.3, 0.1, 0.9]);
        let p = tape.constant(&[2, 2], vec![0.7, 0.3, 0.1, 0.9]);
        let loss = weighted_unlabeled_loss(&mut tape, t, p, &c).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    fn tiny_config() -> ModelConfig {
        let mut config = ModelConfig::with_input_size(8);
        config.conv_stages.truncate(1);
        config
    }

    fn random_image(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Tensor {
        let s = config.input_size;
        let values: Vec<f64> =
            (0..config.channels * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(&[config.channels, s, s], values).unwrap()
    }

    /// Parameter gradients of the literal and implemented labelled terms on a
    /// real forward pass; the values differ by exactly the analytic offset.
    #[test]
    fn literal_form_matches_gradients_and_offset() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let c = [0.2, 0.8];
        for trial in 0..10 {
            let mut params = ModelParams::init(&config, 100 + trial).unwrap();
            let x = random_image(&config, &mut rng);
            let y = crate::tensor::one_hot((trial % 2) as usize, 2);
            let run = |params: &mut ModelParams, literal: bool| -> (f64, Vec<f64>) {
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let xv = tape.constant(
                    &[1, config.channels, config.input_size, config.input_size],
                    x.values().to_vec(),
                );
                let t = tape.constant(&[1, 2], y.clone());
                let probs = params.forward_training(&mut tape, &vars, xv).unwrap();
                let loss = if literal {
                    literal_weighted_labeled_loss(&mut tape, t, probs, &c).unwrap()
                } else {
                    weighted_labeled_loss(&mut tape, t, probs, &c).unwrap()
                };
                tape.backward(loss).unwrap();
                let grads = vars.iter().flat_map(|v| tape.grad(*v).to_vec()).collect();
                (tape.scalar_value(loss), grads)
            };
            let (value_impl, grads_impl) = run(&mut params, false);
            let (value_lit, grads_lit) = run(&mut params, true);

            let w = c[label_to_index(&y)];
            let offset = -(w * w.ln());
            assert!((value_lit - (value_impl + offset)).abs() < 1e-12);

            assert_eq!(grads_impl.len(), grads_lit.len());
            for (a, b) in grads_impl.iter().zip(&grads_lit) {
                assert!((a - b).abs() <= 1e-10, "gradient mismatch {a} vs {b}");
            }
        }
    }

    fn small_mixed_batch(params: &ModelParams, seed: u64) -> MixedBatch {
        let config = params.config().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labeled_images: Vec<Tensor> = (0..2).map(|_| random_image(&config, &mut rng)).collect();
        let labeled: Vec<(&Tensor, Vec<f64>)> = labeled_images
            .iter()
            .enumerate()
            .map(|(i, x)| (x, crate::tensor::one_hot(i % 2, 2)))
            .collect();
        let unlabeled_images: Vec<Tensor> =
            (0..2).map(|_| random_image(&config, &mut rng)).collect();
        let unlabeled: Vec<&Tensor> = unlabeled_images.iter().collect();
        build_mixed_batch(params, &labeled, &unlabeled, &MixMatchConfig::default(), &mut rng)
            .unwrap()
    }

    #[test]
    fn uniform_weights_rescale_each_term() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 33).unwrap();
        let mixed = small_mixed_batch(&params, 34);
        let value = |graph: &mut LossGraph| graph.tape.scalar_value(graph.loss);

        let ce = value(&mut mixmatch_loss_unweighted(&mut params, &mixed, 0.0, 1.0).unwrap());
        let total = value(&mut mixmatch_loss_unweighted(&mut params, &mixed, 1.0, 1.0).unwrap());
        let mse = total - ce;

        let pbc = value(&mut pbc_mixmatch_loss(&mut params, &mixed, &[0.5, 0.5], 1.0, 1.0).unwrap());
        assert!((pbc - (0.5 * ce + 0.25 * mse)).abs() < 1e-12, "{pbc} vs {}", 0.5 * ce + 0.25 * mse);
    }

    #[test]
    fn gamma_zero_reduces_to_weighted_labeled_term() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 35).unwrap();
        let mixed = small_mixed_batch(&params, 36);
        let c = class_weights(&[16, 4]).unwrap();
        let a = pbc_mixmatch_loss(&mut params, &mixed, &c, 0.0, 1.0).unwrap();
        let b = pbc_mixmatch_loss(&mut params, &mixed, &c, 100.0, 0.0).unwrap();
        assert_eq!(a.tape.scalar_value(a.loss), b.tape.scalar_value(b.loss));
    }

    #[test]
    fn invalid_weight_vectors_rejected() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 37).unwrap();
        let mixed = small_mixed_batch(&params, 38);
        for bad in [vec![0.2, 0.7], vec![0.5, 0.5, 0.0], vec![-0.2, 1.2], vec![f64::NAN, 1.0]] {
            assert!(
                matches!(
                    pbc_mixmatch_loss(&mut params, &mixed, &bad, 1.0, 1.0),
                    Err(Error::Config(_) | Error::Dimension(_))
                ),
                "{bad:?} accepted"
            );
        }
    }

    #[test]
    fn pbc_gradient_matches_finite_differences() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 39).unwrap();
        let mixed = small_mixed_batch(&params, 40);
        let c = class_weights(&[16, 4]).unwrap();
        let mut graph = pbc_mixmatch_loss(&mut params, &mixed, &c, 10.0, 0.7).unwrap();
        let analytic: Vec<f64> = graph.gradients().unwrap().concat();
        let flat: Vec<f64> = params.tensors().iter().flat_map(|t| t.values().to_vec()).collect();
        let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
        let mut probe = params.clone();
        let mut f = |p: &[f64]| {
            let mut off = 0;
            for (tensor, len) in probe.tensors_mut().iter_mut().zip(&sizes) {
                tensor.values_mut().copy_from_slice(&p[off..off + len]);
                off += len;
            }
            let graph = pbc_mixmatch_loss(&mut probe, &mixed, &c, 10.0, 0.7).unwrap();
            graph.tape.scalar_value(graph.loss)
        };
        let err = finite_difference_check(&mut f, &flat, 1e-5, &analytic);
        assert!(err < 1e-4, "finite-difference mismatch {err}");
    }

    #[test]
    fn dominant_one_hot_source_keeps_its_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..1000 {
            let a = rng.gen_range(0..2);
            let ya = crate::tensor::one_hot(a, 2);
            let raw: f64 = rng.gen_range(0.0..1.0);
            let yb = vec![raw, 1.0 - raw];
            let lambda = rng.gen_range(0.5f64..1.0).max(0.500001);
            let mixed: Vec<f64> =
                ya.iter().zip(&yb).map(|(&p, &q)| lambda * p + (1.0 - lambda) * q).collect();
            assert_eq!(label_to_index(&mixed), a, "λ'={lambda} ya={ya:?} yb={yb:?}");
        }
    }
}
