//! Held-out fine-tuning: a gene-inherited network against a He-initialized
//! twin under the same budget, on classes the gene never saw.

use learngene::dataset::ImageDataset;
use learngene::engine::{train, NetworkWeights, TrainBudget};
use learngene::evolution::{partition_world, World};
use learngene::genome::{extract_learngene, init_random_structure, LearngeneWeights};
use learngene::netspec::builtin_spec;
use learngene::protocols::heldout_finetune;
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
    let mut classes = world.val_classes.clone();
    classes.extend(&world.novelty_classes);
    let budget = TrainBudget {
        epochs: 3,
        batch_size: 16,
        ..Default::default()
    };
    let spec = builtin_spec("mini-vgg-6")?;
    println!("classes {classes:?}");
    for s in 0..5 {
        let r = heldout_finetune(&gene, &spec, &dataset, &world, &classes, &budget, s)?;
        println!("seed {s}: inherited {:.3}  scratch {:.3}", r.inherited, r.scratch);
    }
    Ok(())
}
