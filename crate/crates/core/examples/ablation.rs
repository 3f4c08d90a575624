//! Trains the five model variants on a freshly generated dataset and prints the
//! comparison table.
//!
//! ```text
//! cargo run --release --example ablation -- n_train=600 epochs=8 seed=1
//! ```
//! Arguments are `key=value` config overrides.

use std::time::Instant;

use dsg::experiment::{ablation_runs, ablation_text, split_ids, AblationRow, ExperimentConfig};
use dsg::scenegen::generate_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(args.iter().map(String::as_str))?;
    cfg.validate()?;

    let [train_ids, val_ids, test_ids] = split_ids(&cfg);
    let train = generate_dataset(train_ids, cfg.seed, &cfg.scene)?;
    let val = generate_dataset(val_ids, cfg.seed, &cfg.scene)?;
    let test = generate_dataset(test_ids, cfg.seed, &cfg.scene)?;

    let start = Instant::now();
    let runs = ablation_runs(&cfg, &train, &val, &test)?;
    let rows: Vec<AblationRow> = runs.iter().map(|r| AblationRow::new(r.ablation, &r.scores)).collect();
    print!("{}", ablation_text(&rows));
    println!("seed {} finished in {:.0}s", cfg.seed, start.elapsed().as_secs_f64());
    Ok(())
}
