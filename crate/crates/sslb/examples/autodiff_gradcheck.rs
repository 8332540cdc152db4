//! Builds a small dense-layer loss on the tape, runs backward, and checks
//! every parameter gradient against central finite differences.

use sslb::tape::{finite_difference_check, Tape};

fn main() -> sslb::Result<()> {
    // One observation, three features, two classes.
    let x_values = vec![0.4, -1.2, 0.7];
    let w_values = vec![0.3, -0.2, 0.5, -0.1, 0.8, 0.25];
    let b_values = vec![0.05, -0.05];
    let target = vec![1.0, 0.0];

    let mut tape = Tape::new();
    let x = tape.constant(&[1, 3], x_values.clone());
    let w = tape.param(&[3, 2], w_values.clone());
    let b = tape.param(&[2], b_values.clone());
    let logits = tape.dense(x, w, b)?;
    let probs = tape.softmax(logits)?;
    let t = tape.constant(&[1, 2], target.clone());
    let loss = tape.cross_entropy(t, probs)?;
    println!("loss = {:.6}", tape.scalar_value(loss));

    tape.backward(loss)?;
    let analytic: Vec<f64> = tape.grad(w).iter().chain(tape.grad(b)).copied().collect();
    println!("dL/dW = {:?}", tape.grad(w));
    println!("dL/db = {:?}", tape.grad(b));

    // The probe re-evaluates the loss from plain numbers, so the check is
    // independent of the tape's backward pass.
    let mut f = |p: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 3], x_values.clone());
        let w = tape.param(&[3, 2], p[..6].to_vec());
        let b = tape.param(&[2], p[6..].to_vec());
        let logits = tape.dense(x, w, b).unwrap();
        let probs = tape.softmax(logits).unwrap();
        let t = tape.constant(&[1, 2], target.clone());
        let loss = tape.cross_entropy(t, probs).unwrap();
        tape.scalar_value(loss)
    };
    let point: Vec<f64> = w_values.iter().chain(&b_values).copied().collect();
    let err = finite_difference_check(&mut f, &point, 1e-5, &analytic);
    println!("worst relative error vs finite differences: {err:.2e}");
    Ok(())
}
