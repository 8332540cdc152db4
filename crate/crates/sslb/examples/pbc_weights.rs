//! Inverse-frequency class weights and the weighted loss terms they drive:
//! the labelled term scales by the winner's weight c_b, the unlabelled term
//! by c_b², and the folded labelled form matches the literal one in gradient.

use sslb::pbc::{
    class_weights, label_to_index, literal_weighted_labeled_loss, weighted_labeled_loss,
    weighted_unlabeled_loss,
};
use sslb::tape::Tape;

fn main() -> sslb::Result<()> {
    let c = class_weights(&[16, 4])?;
    println!("counts [16, 4] -> weights [{:.2}, {:.2}] (rarer class dominates)", c[0], c[1]);

    let target_row = vec![0.0, 1.0];
    println!("selected weight for a class-{} target: {}", label_to_index(&target_row), c[1]);

    // Gradients of the folded and literal labelled forms agree; their values
    // differ by the parameter-free offset −c·ln c.
    let mut grads = Vec::new();
    let mut values = Vec::new();
    for literal in [false, true] {
        let mut tape = Tape::new();
        let logits = tape.param(&[1, 2], vec![0.3, -0.2]);
        let pred = tape.softmax(logits)?;
        let target = tape.constant(&[1, 2], target_row.clone());
        let loss = if literal {
            literal_weighted_labeled_loss(&mut tape, target, pred, &c)?
        } else {
            weighted_labeled_loss(&mut tape, target, pred, &c)?
        };
        tape.backward(loss)?;
        values.push(tape.scalar_value(loss));
        grads.push(tape.grad(logits).to_vec());
    }
    println!("folded loss {:.6}, literal loss {:.6}", values[0], values[1]);
    println!("value gap {:.6} = -c·ln c = {:.6}", values[1] - values[0], -c[1] * c[1].ln());
    println!("gradients identical: {}", grads[0] == grads[1]);

    let mut tape = Tape::new();
    let pred = tape.param(&[1, 2], vec![0.6, 0.4]);
    let target = tape.constant(&[1, 2], vec![0.1, 0.9]);
    let unlabeled = weighted_unlabeled_loss(&mut tape, target, pred, &c)?;
    println!(
        "unlabelled term {:.6} = c₁²·‖ỹ − f‖² = {:.6}",
        tape.scalar_value(unlabeled),
        c[1] * c[1] * (0.5f64.powi(2) * 2.0)
    );
    Ok(())
}
