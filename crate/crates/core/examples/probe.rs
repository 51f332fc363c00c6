//! Early-iteration accuracy of gene-inherited networks against random
//! initialization on novelty classes.

use learngene::dataset::ImageDataset;
use learngene::engine::{train, NetworkWeights, TrainBudget};
use learngene::evolution::{partition_world, World};
use learngene::genome::{extract_learngene, init_random_structure, LearngeneWeights};
use learngene::netspec::builtin_spec;
use learngene::protocols::{probe_instinct, ProbeOptions};
use learngene::seed;
use learngene::synthetic::{generate, SyntheticOptions};

fn ancestor_gene(dataset: &ImageDataset, world: &World) -> learngene::Result<LearngeneWeights> {
    let spec = builtin_spec("mini-vgg-6")?.with_head_classes(world.train_classes.len());
    let net = NetworkWeights::<f32>::he_init(&spec, &mut seed::from_seed(0))?;
    let budget = TrainBudget {
        epochs: 4,
        batch_size: 16,
        ..Default::default()
    };
    let (trained, _) = train(net, &world.samples(dataset, &world.train_classes, false), &budget)?;
    let structure = init_random_structure(&spec, 0.5, &mut seed::from_seed(1))?;
    Ok(extract_learngene(&trained, &structure)?.with_ids("ancestor", None))
}

fn main() -> learngene::Result<()> {
    let dataset = generate(&SyntheticOptions::default())?;
    let world = partition_world(&dataset, 8, 2, 0.2, 0)?;
    let gene = ancestor_gene(&dataset, &world)?;
    let opts = ProbeOptions {
        iterations: vec![0, 5, 10, 30, 60],
        ..Default::default()
    };
    let table = probe_instinct(&gene, &builtin_spec("mini-vgg-6")?, &dataset, &world, &world.novelty_classes, &opts)?;
    print!("{}", table.to_text());
    Ok(())
}
