//! Run configuration as `key = value` text.

use learngene::config::RunConfig;

fn main() -> learngene::Result<()> {
    let text = "\
# smaller, faster run
population = 6
tournament_size = 3
generations = 5
train_epochs = 2
ablations = no_mutation
seeds = 0,1,2
";
    let cfg = RunConfig::from_ini_str(text)?;
    println!(
        "population {} / tournament {} / {} generations / ablations {:?}",
        cfg.evolution.population, cfg.evolution.tournament_size, cfg.evolution.generations, cfg.evolution.ablations
    );
    println!("\nfull configuration:\n{}", cfg.to_ini());
    match RunConfig::from_ini_str("populaton = 6") {
        Err(e) => println!("typo rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
