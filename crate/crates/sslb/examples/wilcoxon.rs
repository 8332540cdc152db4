//! Paired Wilcoxon signed-rank tests: an exact small-sample p-value, the
//! zero-difference/tie handling, and the normal approximation for larger n.

use sslb::stats::wilcoxon_signed_rank;

fn main() -> sslb::Result<()> {
    // Method B beats method A on 6 paired seeds.
    let a = [0.70, 0.72, 0.68, 0.75, 0.71, 0.69];
    let b = [0.78, 0.75, 0.74, 0.80, 0.77, 0.70];
    let r = wilcoxon_signed_rank(&b, &a)?;
    println!("n = {}: W = {}, exact p = {:.6}", r.n_used, r.statistic, r.p_value);

    // Zero differences drop out; equal |differences| share an average rank.
    let a = [0.5, 0.60, 0.58, 0.71, 0.62, 0.55, 0.64];
    let b = [0.5, 0.63, 0.55, 0.74, 0.65, 0.52, 0.67];
    let r = wilcoxon_signed_rank(&b, &a)?;
    println!("ties and a zero pair: n_used = {}, W = {}, p = {:.6}", r.n_used, r.statistic, r.p_value);

    // Above 12 usable pairs the test switches to the tie-corrected normal
    // approximation with continuity correction.
    let a: Vec<f64> = (0..16).map(|i| 0.6 + 0.01 * f64::from(i)).collect();
    let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + if i % 4 == 0 { -0.01 } else { 0.02 }).collect();
    let r = wilcoxon_signed_rank(&b, &a)?;
    println!("n = {}: W = {}, approximate p = {:.6}", r.n_used, r.statistic, r.p_value);
    Ok(())
}
