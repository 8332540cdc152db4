//! Runs a miniature method-comparison grid end to end: paired scenarios per
//! seed, per-run results streamed to CSV, then cell means and paired
//! significance tests.

use sslb::data::{generate_synthetic, ScenarioConfig};
use sslb::experiment::{run_grid, GridConfig, MethodId, TrainConfig};
use sslb::summary::{render_summary_text, summarize, Comparison};

fn main() -> sslb::Result<()> {
    let pool = generate_synthetic(31, 40, 16, 0.4)?;
    let (neg, pos) = pool.split_by_class();

    let grid = GridConfig {
        methods: vec![MethodId::Supervised, MethodId::SupervisedBalanced],
        neg_fractions: vec![0.8],
        n_ls: vec![10, 15],
        seeds: 5,
        train: TrainConfig { epochs: 6, max_lr: 2e-3, image_size: 16, ..Default::default() },
        scenario: ScenarioConfig { total_sample: 68, ..Default::default() },
        jobs: 1,
    };

    let out = std::env::temp_dir().join("sslb_grid_demo");
    let results = run_grid(&pos, &neg, &grid, &out, false)?;
    println!("{} runs -> {}", results.len(), out.join("results.csv").display());

    let comparisons = vec![Comparison::new(MethodId::SupervisedBalanced, MethodId::Supervised)];
    let summary = summarize(&results, &comparisons, 0.1)?;
    print!("{}", render_summary_text(&summary));
    Ok(())
}
