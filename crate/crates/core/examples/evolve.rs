//! Short evolution run on the procedural dataset, followed by the report.
//!
//! ```text
//! cargo run --release --example evolve -- [generations] [run-dir]
//! ```

use std::path::PathBuf;

use learngene::evolution::{evolve, EvolutionConfig, RunDir};
use learngene::report::report;
use learngene::synthetic::{generate, SyntheticOptions};

fn main() -> learngene::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let generations = args.next().map(|g| g.parse().expect("generations")).unwrap_or(4);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("learngene-evolve"));

    let dataset = generate(&SyntheticOptions {
        per_class: 60,
        ..Default::default()
    })?;
    let mut config = EvolutionConfig {
        generations,
        ..Default::default()
    };
    config.train.epochs = 2;
    config.critic.epochs = 2;

    let dir = RunDir { path: out };
    let state = evolve(&config, &dataset, Some(&dir), None)?;
    for r in &state.records {
        println!(
            "generation {:>2}: k={} critic mean {:.3} max {:.3}, pool critic mean {:.3} ({} genes)",
            r.generation,
            r.k,
            r.critic_mean,
            r.critic_max,
            r.pool_critic_mean,
            r.pool.len()
        );
    }
    let rep = report(&dir)?;
    print!("\n{}", rep.summary);
    println!("records, checkpoint and report in {}", dir.path.display());
    Ok(())
}
