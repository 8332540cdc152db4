//! Trains the supervised baseline on a small balanced scenario and prints
//! the validation curve.

use sslb::data::{generate_synthetic, ScenarioConfig};
use sslb::experiment::{grid_scenario, run_training, MethodId, TrainConfig};

fn main() -> sslb::Result<()> {
    let pool = generate_synthetic(21, 60, 16, 0.3)?;
    let (neg, pos) = pool.split_by_class();
    let base = ScenarioConfig { total_sample: 100, ..Default::default() };
    let scenario = grid_scenario(&pos, &neg, &base, 0, 20, 0.5)?;

    // Desk-scale settings: small images train from scratch, so the learning
    // rate sits far above the fine-tuning-oriented default.
    let config = TrainConfig { epochs: 12, max_lr: 2e-3, image_size: 16, ..Default::default() };
    let result = run_training(&scenario, MethodId::Supervised, &config, 0)?;
    for (epoch, acc) in result.epoch_accuracy.iter().enumerate() {
        println!("epoch {epoch:>2}: val acc {acc:.4}");
    }
    println!("best: {:.4}", result.best_val_acc);
    Ok(())
}
