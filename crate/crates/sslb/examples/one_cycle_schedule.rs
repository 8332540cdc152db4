//! Traces the 1-cycle learning-rate schedule and uses it to drive Adam with
//! decoupled weight decay on a toy quadratic.

use sslb::optim::{one_cycle_lr, Adam, OptimizerConfig};
use sslb::tensor::Tensor;

fn main() -> sslb::Result<()> {
    let config = OptimizerConfig::new(0.1, 0.01, 100);
    for step in [0, 15, 30, 50, 75, 100] {
        println!("step {step:>3}: lr = {:.6}", one_cycle_lr(step, &config)?);
    }

    // Minimize (x - 3)² from x = 0; gradient is 2(x - 3).
    let mut params = vec![Tensor::new(&[1], vec![0.0])?];
    let mut adam = Adam::new(&[1]);
    for step in 0..100 {
        let x = params[0].values()[0];
        let grads = vec![vec![2.0 * (x - 3.0)]];
        let lr = one_cycle_lr(step, &config)?;
        adam.step(&mut params, &grads, lr, &config)?;
    }
    println!(
        "after {} Adam steps: x = {:.4} (target 3, pulled slightly back by weight decay)",
        adam.step_count(),
        params[0].values()[0]
    );
    Ok(())
}
