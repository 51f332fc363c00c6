use learngene::config::RunConfig;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ini_text_round_trips(
        population in 2usize..40,
        tournament in 2usize..5,
        decay in 0.01f64..0.99,
        lr in 0.001f32..0.5,
        epochs in 1usize..6,
        seed in any::<u64>(),
        seeds in proptest::collection::vec(0u64..1000, 1..6),
        no_mutation in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.evolution.population = population;
        cfg.evolution.tournament_size = tournament.min(population);
        cfg.evolution.decay = decay;
        cfg.evolution.train.lr = lr;
        cfg.evolution.critic.epochs = epochs;
        cfg.evolution.seed = seed;
        cfg.evolution.ablations.no_mutation = no_mutation;
        cfg.seeds = seeds;
        let back = RunConfig::from_ini_str(&cfg.to_ini()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn rejects_sections_duplicates_and_unknown_keys() {
    assert!(RunConfig::from_ini_str("[evolution]\npopulation = 4\n").is_err());
    assert!(RunConfig::from_ini_str("population = 4\npopulation = 5\n").is_err());
    assert!(RunConfig::from_ini_str("populaton = 4\n").is_err());
    assert!(RunConfig::from_ini_str("ablations = no_mutation, bogus\n").is_err());
}

#[test]
fn load_checks_referenced_paths_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ini");
    std::fs::write(&p, format!("dataset = {}\n", dir.path().join("nope.lgds").display())).unwrap();
    assert!(RunConfig::load(&p).is_err());
    std::fs::write(&p, "seeds = \n").unwrap();
    assert!(RunConfig::load(&p).is_err());
    std::fs::write(&p, "# comment only\n").unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), RunConfig::default());
}
