//! Initializes the small convolutional classifier, saves a checkpoint, and
//! verifies the reloaded model reproduces its predictions exactly.

use sslb::data::generate_synthetic;
use sslb::model::{ModelConfig, ModelParams};

fn main() -> sslb::Result<()> {
    let config = ModelConfig::with_input_size(32);
    let params = ModelParams::init(&config, 17)?;
    println!("{} parameters across {} tensors", params.parameter_count(), params.tensors().len());

    let dataset = generate_synthetic(17, 3, 32, 0.5)?;
    let images: Vec<_> = dataset.observations().iter().map(|o| &o.image).collect();
    let probs = params.infer(&images)?;
    for (obs, row) in dataset.observations().iter().zip(&probs) {
        println!("{}: p = [{:.4}, {:.4}] (true class {})", obs.id, row[0], row[1], obs.label);
    }

    let path = std::env::temp_dir().join("sslb_demo.ckpt");
    params.save_checkpoint(&path)?;
    let restored = ModelParams::load_checkpoint(&config, &path)?;
    println!("reload reproduces predictions: {}", restored.infer(&images)? == probs);
    Ok(())
}
