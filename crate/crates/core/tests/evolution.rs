use learngene::evolution::{evolve, read_records, EvolutionConfig, EvolutionState, RunDir};
use learngene::genome::validate_structure;
use learngene::report::{best_pool_entry, fraction_from_kernel_sizes};
use learngene::synthetic::{generate, SyntheticOptions};

fn tiny() -> (EvolutionConfig, learngene::dataset::ImageDataset) {
    let ds = generate(&SyntheticOptions {
        per_class: 12,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = EvolutionConfig {
        generations: 3,
        seed: 21,
        ..Default::default()
    };
    cfg.train.epochs = 1;
    cfg.critic.epochs = 1;
    (cfg, ds)
}

#[test]
fn records_are_independent_of_worker_count() {
    let (cfg, ds) = tiny();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, workers) in dirs.iter().zip([1, 4]) {
        let cfg = EvolutionConfig { workers, ..cfg.clone() };
        evolve(&cfg, &ds, Some(&RunDir { path: d.path().into() }), None).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(RunDir { path: d.path().into() }.records()).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
}

#[test]
fn checkpoint_round_trip_and_pool_invariants() {
    let (cfg, ds) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let rd = RunDir { path: dir.path().into() };
    let state = evolve(&cfg, &ds, Some(&rd), None).unwrap();
    let loaded = EvolutionState::load(&rd.checkpoint()).unwrap();
    assert_eq!(loaded, state);
    assert_eq!(read_records(&rd.records()).unwrap(), state.records);
    assert!(state.tree.is_well_formed());
    assert!(state.pool.len() <= cfg.pool_capacity);
    let spec = cfg.network_spec().unwrap();
    for e in &state.pool {
        assert!(validate_structure(&e.gene.structure, &spec).is_empty());
        assert!(e.score >= e.critic_score);
        assert_eq!(state.tree.nodes[e.tree_node].gene_id, e.gene.gene_id);
    }
    for r in &state.records {
        assert_eq!(r.individuals.len(), cfg.population);
        assert_eq!(r.winners.len(), cfg.population.div_ceil(cfg.tournament_size));
        let best = best_pool_entry(&r.pool).unwrap();
        assert_eq!(fraction_from_kernel_sizes(&best.kernel_sizes, &spec).unwrap(), best.parameter_fraction);
    }
    assert_eq!(state.best().unwrap().gene.gene_id, best_pool_entry(&state.records[2].pool).unwrap().gene_id);
}

#[test]
fn resume_rejects_a_different_seed() {
    let (cfg, ds) = tiny();
    let state = evolve(&EvolutionConfig { generations: 1, ..cfg.clone() }, &ds, None, None).unwrap();
    let other = EvolutionConfig { seed: 99, ..cfg };
    assert!(evolve(&other, &ds, None, Some(state)).is_err());
}

#[test]
fn no_evolution_baseline_yields_one_gene() {
    let (mut cfg, ds) = tiny();
    cfg.ablations.no_evolution = true;
    let state = evolve(&cfg, &ds, None, None).unwrap();
    assert_eq!(state.pool.len(), 1);
    assert_eq!(state.records.len(), 1);
    assert_eq!(state.records[0].individuals[0].task.len(), cfg.train_classes);
}
