//! Walks one MixMatch step on a tiny model: guessed-and-sharpened labels for
//! the unlabelled images, MixUp against a shuffled partner pool, then the
//! ramped composite loss and its gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslb::data::generate_synthetic;
use sslb::mixmatch::{
    build_mixed_batch, mixmatch_loss_unweighted, ramp_up, sharpen, MixMatchConfig,
};
use sslb::model::{ModelConfig, ModelParams};
use sslb::tensor::one_hot;

fn main() -> sslb::Result<()> {
    let mut config = ModelConfig::with_input_size(16);
    config.conv_stages.truncate(2);
    let mut params = ModelParams::init(&config, 2)?;

    let dataset = generate_synthetic(2, 4, 16, 0.5)?;
    let images: Vec<_> = dataset.observations().iter().map(|o| &o.image).collect();
    let labeled = vec![(images[0], one_hot(0, 2)), (images[1], one_hot(1, 2))];
    let unlabeled = vec![images[2], images[3]];

    let mm = MixMatchConfig::default();
    println!("K = {}, sharpening ρ = {}, MixUp α = {}", mm.k, mm.temperature, mm.alpha);
    println!("sharpen([0.6, 0.4]) = {:?}", sharpen(&[0.6, 0.4], mm.temperature)?);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mixed = build_mixed_batch(&params, &labeled, &unlabeled, &mm, &mut rng)?;
    println!("mixed batch: {} labelled + {} unlabelled entries", mixed.labeled.len(), mixed.unlabeled.len());
    for (i, (_, y)) in mixed.unlabeled.iter().enumerate() {
        println!("  unlabelled target {i}: [{:.4}, {:.4}]", y[0], y[1]);
    }

    // Early in training the consistency term is ramped down.
    let step = 600;
    let r = ramp_up(step, mm.rampup_horizon);
    let mut graph = mixmatch_loss_unweighted(&mut params, &mixed, mm.gamma, r)?;
    println!("loss at step {step} (r = {r}): {:.6}", graph.tape.scalar_value(graph.loss));
    let grads = graph.gradients()?;
    let norm: f64 = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    println!("gradient norm over {} tensors: {:.6}", grads.len(), norm);
    Ok(())
}
