//! Release acceptance suite. Each test covers one numbered criterion and
//! prints one `[PASS]`/`[FAIL]` line; run with `--nocapture` to see them all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslb::data::{generate_synthetic, ScenarioConfig};
use sslb::experiment::{grid_scenario, run_grid, run_training, GridConfig, MethodId, TrainConfig};
use sslb::mixmatch::{
    build_mixed_batch, mixmatch_loss_unweighted, mixup_pair, ramp_up, sample_mixup_lambda,
    sharpen, MixMatchConfig, MixedBatch,
};
use sslb::model::{ModelConfig, ModelParams};
use sslb::pbc::{class_weights, literal_weighted_labeled_loss, pbc_mixmatch_loss, weighted_labeled_loss};
use sslb::stats::wilcoxon_signed_rank;
use sslb::summary::{summarize, Comparison};
use sslb::tape::Tape;
use sslb::tensor::{one_hot, Tensor};

fn criterion(n: u32, what: &str, run: impl FnOnce() -> Result<(), String>) {
    match run() {
        Ok(()) => println!("[PASS] criterion {n}: {what}"),
        Err(msg) => {
            println!("[FAIL] criterion {n}: {what} — {msg}");
            panic!("criterion {n} failed: {msg}");
        }
    }
}

fn tiny_config() -> ModelConfig {
    let mut config = ModelConfig::with_input_size(8);
    config.conv_stages.truncate(1);
    config
}

fn random_image(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = [config.channels, config.input_size, config.input_size];
    let values = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(&shape, values).expect("shape matches values")
}

/// Independent central-difference oracle with a per-coordinate step ladder:
/// a ReLU kink inside the probe interval corrupts a large step but clears at
/// a smaller one, while roundoff noise on a near-zero gradient does the
/// reverse. A genuine gradient bug fails every rung. The 1e-6 scale floor
/// treats coordinates a millionth of the loss scale as matching absolutely;
/// below that the difference quotient is roundoff, not signal.
fn worst_gradient_error(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut best = f64::INFINITY;
        for h in [1e-5, 1e-6, 3e-7] {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
            best = best.min((analytic[i] - numeric).abs() / scale);
            if best < 1e-4 {
                break;
            }
        }
        worst = worst.max(best);
    }
    worst
}

fn tiny_mixed_batch(params: &ModelParams, seed: u64) -> MixedBatch {
    let config = params.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Tensor> = (0..4).map(|_| random_image(config, &mut rng)).collect();
    let labeled: Vec<(&Tensor, Vec<f64>)> =
        vec![(&images[0], one_hot(0, 2)), (&images[1], one_hot(1, 2))];
    let unlabeled: Vec<&Tensor> = vec![&images[2], &images[3]];
    build_mixed_batch(params, &labeled, &unlabeled, &MixMatchConfig::default(), &mut rng)
        .expect("valid tiny batch")
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    criterion(1, "autodiff matches finite differences on 100 tiny networks", || {
        let config = tiny_config();
        for net in 0..100u64 {
            let mut params =
                ModelParams::init(&config, 1000 + net).map_err(|e| e.to_string())?;
            if params.parameter_count() > 500 {
                return Err(format!("tiny net has {} parameters", params.parameter_count()));
            }
            let mixed = tiny_mixed_batch(&params, 2000 + net);
            let c = class_weights(&[3, 1]).map_err(|e| e.to_string())?;
            for weighted in [false, true] {
                let build = |p: &mut ModelParams| {
                    if weighted {
                        pbc_mixmatch_loss(p, &mixed, &c, 10.0, 0.7)
                    } else {
                        mixmatch_loss_unweighted(p, &mixed, 10.0, 0.7)
                    }
                };
                let mut graph = build(&mut params).map_err(|e| e.to_string())?;
                let analytic: Vec<f64> =
                    graph.gradients().map_err(|e| e.to_string())?.concat();
                let flat: Vec<f64> =
                    params.tensors().iter().flat_map(|t| t.values().to_vec()).collect();
                let sizes: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
                let mut probe = params.clone();
                let mut f = |p: &[f64]| {
                    let mut off = 0;
                    for (tensor, len) in probe.tensors_mut().iter_mut().zip(&sizes) {
                        tensor.values_mut().copy_from_slice(&p[off..off + len]);
                        off += len;
                    }
                    let graph = build(&mut probe).expect("probe graph");
                    graph.tape.scalar_value(graph.loss)
                };
                let err = worst_gradient_error(&mut f, &flat, &analytic);
                if err >= 1e-4 {
                    return Err(format!(
                        "net {net} ({}) worst relative error {err:.2e}",
                        if weighted { "weighted" } else { "unweighted" }
                    ));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_02_class_weight_exactness() {
    criterion(2, "inverse-frequency weights are exact, normalized, scale-invariant", || {
        let w = class_weights(&[80, 20]).map_err(|e| e.to_string())?;
        if (w[0] - 0.2).abs() > 1e-12 || (w[1] - 0.8).abs() > 1e-12 {
            return Err(format!("[80,20] gave {w:?}"));
        }
        let w = class_weights(&[16, 4]).map_err(|e| e.to_string())?;
        if (w[0] - 0.2).abs() > 1e-12 || (w[1] - 0.8).abs() > 1e-12 {
            return Err(format!("[16,4] gave {w:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let counts: Vec<usize> =
                (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(1..=500)).collect();
            let w = class_weights(&counts).map_err(|e| e.to_string())?;
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(format!("weights for {counts:?} sum to {}", w.iter().sum::<f64>()));
            }
            for k in 1..=10usize {
                let scaled: Vec<usize> = counts.iter().map(|&n| n * k).collect();
                let ws = class_weights(&scaled).map_err(|e| e.to_string())?;
                if ws != w {
                    return Err(format!("{counts:?} × {k} changed weights: {w:?} vs {ws:?}"));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_03_sharpening_exactness() {
    criterion(3, "sharpening closed form, simplex preservation, max growth", || {
        let y = sharpen(&[0.6, 0.4], 0.5).map_err(|e| e.to_string())?;
        if (y[0] - 0.6923).abs() > 1e-4 || (y[1] - 0.3077).abs() > 1e-4 {
            return Err(format!("sharpen([0.6,0.4], 0.5) gave {y:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let classes = rng.gen_range(2..=5);
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let temperature = rng.gen_range(0.05..1.0);
            let sharp = sharpen(&row, temperature).map_err(|e| e.to_string())?;
            let sum: f64 = sharp.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || sharp.iter().any(|&v| v < 0.0) {
                return Err(format!("{row:?} sharpened off the simplex: {sharp:?}"));
            }
            let max_before = row.iter().cloned().fold(f64::MIN, f64::max);
            let max_after = sharp.iter().cloned().fold(f64::MIN, f64::max);
            if max_after <= max_before {
                return Err(format!(
                    "max coordinate went {max_before} -> {max_after} at ρ={temperature}"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_04_mixup_contract() {
    criterion(4, "MixUp λ' range, simplex labels, λ'=1 bit-exactness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let lambda = sample_mixup_lambda(0.75, &mut rng);
            if !(0.5..=1.0).contains(&lambda) {
                return Err(format!("λ' = {lambda} escaped [0.5, 1]"));
            }
        }
        let a_img = Tensor::filled(&[1, 2, 2], 0.25);
        let b_img = Tensor::filled(&[1, 2, 2], 0.75);
        for _ in 0..1_000 {
            let lambda = sample_mixup_lambda(0.75, &mut rng);
            let (_, label) = mixup_pair(
                (&a_img, &[0.9, 0.1][..]),
                (&b_img, &[0.2, 0.8][..]),
                lambda,
            )
            .map_err(|e| e.to_string())?;
            let sum: f64 = label.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || label.iter().any(|&v| v < 0.0) {
                return Err(format!("mixed label off the simplex: {label:?}"));
            }
        }
        let (image, label) =
            mixup_pair((&a_img, &[0.9, 0.1][..]), (&b_img, &[0.2, 0.8][..]), 1.0)
                .map_err(|e| e.to_string())?;
        if image.values() != a_img.values() || label != vec![0.9, 0.1] {
            return Err("λ' = 1 did not reproduce the first argument bit-exactly".into());
        }
        Ok(())
    });
}

#[test]
fn criterion_05_ramp_up() {
    criterion(5, "ramp-up hits 0, 1/2, 1 and is monotone", || {
        let checks = [(0usize, 0.0), (1500, 0.5), (3000, 1.0), (4500, 1.0), (6000, 1.0)];
        for (step, expected) in checks {
            let r = ramp_up(step, 3000.0);
            if r != expected {
                return Err(format!("r({step}) = {r}, expected {expected}"));
            }
        }
        let mut previous = -1.0;
        for step in 0..=6000 {
            let r = ramp_up(step, 3000.0);
            if r < previous {
                return Err(format!("r({step}) = {r} dropped below {previous}"));
            }
            previous = r;
        }
        Ok(())
    });
}

#[test]
fn criterion_06_weighted_loss_equivalence() {
    criterion(6, "literal and implemented weighted losses share gradients", || {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..100u64 {
            let params = ModelParams::init(&config, 6000 + trial).map_err(|e| e.to_string())?;
            let image = random_image(&config, &mut rng);
            let label = one_hot(rng.gen_range(0..2), 2);
            let counts = [rng.gen_range(1..=40usize), rng.gen_range(1..=40usize)];
            let c = class_weights(&counts).map_err(|e| e.to_string())?;

            let mut grads = Vec::new();
            for literal in [false, true] {
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape);
                let x = tape.constant(
                    &[1, config.channels, config.input_size, config.input_size],
                    image.values().to_vec(),
                );
                let t = tape.constant(&[1, 2], label.clone());
                let mut frozen = params.clone();
                let pred =
                    frozen.forward_training(&mut tape, &vars, x).map_err(|e| e.to_string())?;
                let loss = if literal {
                    literal_weighted_labeled_loss(&mut tape, t, pred, &c)
                } else {
                    weighted_labeled_loss(&mut tape, t, pred, &c)
                }
                .map_err(|e| e.to_string())?;
                tape.backward(loss).map_err(|e| e.to_string())?;
                let flat: Vec<f64> =
                    vars.iter().flat_map(|v| tape.grad(*v).to_vec()).collect();
                grads.push(flat);
            }
            let worst = grads[0]
                .iter()
                .zip(&grads[1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst > 1e-10 {
                return Err(format!("trial {trial}: gradient gap {worst:.2e}"));
            }
        }
        Ok(())
    });
}

/// Independent enumeration oracle: ranks recomputed from scratch, the null
/// distribution walked over all 2ⁿ sign patterns, two-sided tail doubled.
fn enumerated_p(a: &[f64], b: &[f64]) -> Option<f64> {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut rank2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        for k in i..=j {
            rank2[order[k]] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    let w2: u64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank2[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| rank2[i]).sum();
        if s <= w2 {
            le += 1;
        }
        if s >= w2 {
            ge += 1;
        }
    }
    Some((2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0))
}

#[test]
fn criterion_07_wilcoxon_oracle() {
    criterion(7, "exact signed-rank p equals full sign-pattern enumeration", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 200 {
            let n = rng.gen_range(5..=10);
            // Integer grids provoke ties and zero differences.
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect();
            let Some(expected) = enumerated_p(&a, &b) else { continue };
            let got = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
            if (got.p_value - expected).abs() > 1e-12 {
                return Err(format!(
                    "a={a:?} b={b:?}: p {} vs enumerated {expected}",
                    got.p_value
                ));
            }
            tested += 1;
        }
        Ok(())
    });
}

#[test]
fn criterion_08_scenario_fidelity() {
    criterion(8, "labelled rounding table, 61-image validation, disjoint paired splits", || {
        let pool = generate_synthetic(8, 110, 16, 0.5).map_err(|e| e.to_string())?;
        let (neg, pos) = pool.split_by_class();
        let base = ScenarioConfig::default();
        let expected_labeled = [
            (10usize, 0.5f64, (5usize, 5usize)),
            (10, 0.7, (7, 3)),
            (10, 0.8, (8, 2)),
            (15, 0.5, (8, 7)),
            (15, 0.7, (11, 4)),
            (15, 0.8, (12, 3)),
            (20, 0.5, (10, 10)),
            (20, 0.7, (14, 6)),
            (20, 0.8, (16, 4)),
        ];
        for (n_l, neg_fraction, expected) in expected_labeled {
            let scenario = grid_scenario(&pos, &neg, &base, 0, n_l, neg_fraction)
                .map_err(|e| e.to_string())?;
            if scenario.labeled.class_counts() != expected {
                return Err(format!(
                    "n_l={n_l}, neg={neg_fraction}: labelled counts {:?}, expected {expected:?}",
                    scenario.labeled.class_counts()
                ));
            }
            if scenario.validation.len() != 61 || scenario.validation.class_counts() != (31, 30) {
                return Err(format!(
                    "validation is {} images with counts {:?}",
                    scenario.validation.len(),
                    scenario.validation.class_counts()
                ));
            }
            let mut ids: Vec<&str> = scenario.labeled.ids();
            ids.extend(scenario.unlabeled.ids());
            ids.extend(scenario.validation.ids());
            let unique: std::collections::BTreeSet<&str> = ids.iter().copied().collect();
            if unique.len() != ids.len() {
                return Err(format!("splits share observations at n_l={n_l}, neg={neg_fraction}"));
            }
            let again = grid_scenario(&pos, &neg, &base, 0, n_l, neg_fraction)
                .map_err(|e| e.to_string())?;
            if scenario.manifest() != again.manifest() {
                return Err("scenario resampling broke method pairing".into());
            }
        }
        Ok(())
    });
}

/// Desk-scale recipe: from-scratch training needs a far higher learning rate
/// than the fine-tuning-oriented defaults, and a tamer consistency weight so
/// the unlabelled term guides rather than flattens the classifier.
fn desk_train() -> TrainConfig {
    let mut config = TrainConfig { epochs: 50, max_lr: 2e-3, image_size: 32, ..Default::default() };
    config.mixmatch.gamma = 5.0;
    config
}

#[test]
fn criterion_09_directional_pbc_gain() {
    criterion(9, "balance correction beats plain MixMatch at 80/20 (p < 0.1)", || {
        let pool = generate_synthetic(9, 110, 32, 0.5).map_err(|e| e.to_string())?;
        let (neg, pos) = pool.split_by_class();
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut grid = GridConfig {
            methods: vec![MethodId::MixMatch, MethodId::MixMatchPbc],
            neg_fractions: vec![0.8],
            n_ls: vec![20],
            seeds: 10,
            train: desk_train(),
            scenario: ScenarioConfig::default(),
            jobs: 1,
        };
        let comparisons = vec![Comparison::new(MethodId::MixMatchPbc, MethodId::MixMatch)];
        let verdict = |results: &[sslb::experiment::RunResult]| -> Result<(f64, f64), String> {
            let summary = summarize(results, &comparisons, 0.1).map_err(|e| e.to_string())?;
            let row = &summary.gains[0];
            let gain = row.gain.ok_or("no finished runs to compare")?;
            let p = row.p_value.ok_or("too few paired seeds for the test")?;
            Ok((gain, p))
        };
        let results = run_grid(&pos, &neg, &grid, out.path(), false).map_err(|e| e.to_string())?;
        let (mut gain, mut p) = verdict(&results)?;
        if !(gain > 0.0 && p < 0.1) {
            // The acceptance contract allows one escalation to 20 seeds
            // before a miss counts as a defect.
            grid.seeds = 20;
            let results =
                run_grid(&pos, &neg, &grid, out.path(), true).map_err(|e| e.to_string())?;
            (gain, p) = verdict(&results)?;
        }
        if gain > 0.0 && p < 0.1 {
            println!("    gain {gain:+.4} at p = {p:.4} over {} seeds", grid.seeds);
            Ok(())
        } else {
            Err(format!("gain {gain:+.4} with p = {p:.4}"))
        }
    });
}

#[test]
fn criterion_10_supervised_sanity() {
    criterion(10, "supervised baseline reaches 0.75 on easy balanced data", || {
        let pool = generate_synthetic(10, 110, 32, 0.3).map_err(|e| e.to_string())?;
        let (neg, pos) = pool.split_by_class();
        let scenario = grid_scenario(&pos, &neg, &ScenarioConfig::default(), 0, 20, 0.5)
            .map_err(|e| e.to_string())?;
        let result = run_training(&scenario, MethodId::Supervised, &desk_train(), 0)
            .map_err(|e| e.to_string())?;
        if result.best_val_acc >= 0.75 {
            println!("    best validation accuracy {:.4}", result.best_val_acc);
            Ok(())
        } else {
            Err(format!("best validation accuracy {:.4}", result.best_val_acc))
        }
    });
}

#[test]
fn criterion_11_cli_determinism() {
    criterion(11, "two identical experiment invocations write identical results.csv", || {
        let run = |dir: &std::path::Path| -> Result<Vec<u8>, String> {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_sslb"))
                .args([
                    "experiment",
                    "--synthetic",
                    "--seeds",
                    "2",
                    "--nl",
                    "10",
                    "--neg-frac",
                    "0.8",
                    "--epochs",
                    "2",
                    "--image-size",
                    "16",
                    "--lr",
                    "0.002",
                    "--out",
                ])
                .arg(dir)
                .stdout(std::process::Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("experiment exited with {status}"));
            }
            std::fs::read(dir.join("results.csv")).map_err(|e| e.to_string())
        };
        let first_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let second_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let first = run(first_dir.path())?;
        let second = run(second_dir.path())?;
        if first != second {
            return Err("results.csv differs between identical invocations".into());
        }
        let rows = first.iter().filter(|&&b| b == b'\n').count() - 1;
        if rows != 8 {
            return Err(format!("expected 8 result rows, found {rows}"));
        }
        Ok(())
    });
}
