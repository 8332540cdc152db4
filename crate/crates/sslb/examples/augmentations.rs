//! Samples the flip/rotation augmentation group, shows that every transform
//! is exactly invertible, and draws K stochastic views of one image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sslb::augment::{apply_transform, k_augmentations, sample_transform};
use sslb::data::generate_synthetic;

fn main() -> sslb::Result<()> {
    let dataset = generate_synthetic(11, 1, 16, 0.5)?;
    let image = &dataset.observations()[0].image;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for _ in 0..4 {
        let spec = sample_transform(&mut rng);
        let transformed = apply_transform(spec, image)?;
        let restored = apply_transform(spec.inverse(), &transformed)?;
        println!(
            "flip={:<5} rotation={:?}: moved {:>3} pixels, inverse restores: {}",
            spec.horizontal_flip,
            spec.rotation,
            transformed
                .values()
                .iter()
                .zip(image.values())
                .filter(|(a, b)| a != b)
                .count(),
            restored.values() == image.values()
        );
    }

    let views = k_augmentations(image, 3, &mut rng)?;
    println!("drew {} augmented views of shape {:?}", views.len(), views[0].shape());
    Ok(())
}
