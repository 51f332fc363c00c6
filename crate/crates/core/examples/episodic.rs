//! Few-shot episodes: the gene is inherited into a wider target, fine-tuned
//! on a small support set and scored on queries.

use learngene::dataset::ImageDataset;
use learngene::engine::{train, NetworkWeights, TrainBudget};
use learngene::evolution::{partition_world, World};
use learngene::genome::{extract_learngene, init_random_structure, LearngeneWeights};
use learngene::netspec::builtin_spec;
use learngene::protocols::{episodic_eval, EpisodicOptions};
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
    for (name, k_shot) in [("mini-vgg-6", 5), ("mini-vgg-8", 5), ("mini-vgg-6", 10)] {
        let target = builtin_spec(name)?;
        let opts = EpisodicOptions {
            n_way: 2,
            k_shot,
            episodes: 10,
            ..Default::default()
        };
        let r = episodic_eval(&gene, &dataset, &world, &classes, &target, &opts)?;
        println!("{name} 2-way {k_shot}-shot: {:.3} ± {:.3} over {} episodes", r.mean, r.ci95, r.accuracies.len());
    }
    Ok(())
}
