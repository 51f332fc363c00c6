//! Cut a gene out of a trained network and grow descendants of other widths
//! and depths from it.

use learngene::engine::{evaluate, train, NetworkWeights, TrainBudget};
use learngene::evolution::partition_world;
use learngene::genome::{extract_learngene, init_random_structure};
use learngene::inheritance::{inherit_with_plan, InheritOptions};
use learngene::netspec::builtin_spec;
use learngene::seed;
use learngene::synthetic::{generate, SyntheticOptions};

fn main() -> learngene::Result<()> {
    let dataset = generate(&SyntheticOptions::default())?;
    let world = partition_world(&dataset, 8, 2, 0.2, 0)?;
    let spec = builtin_spec("mini-vgg-6")?.with_head_classes(world.train_classes.len());

    let net = NetworkWeights::<f32>::he_init(&spec, &mut seed::from_seed(0))?;
    let budget = TrainBudget {
        epochs: 3,
        batch_size: 16,
        ..Default::default()
    };
    let (trained, acc) = train(net, &world.samples(&dataset, &world.train_classes, false), &budget)?;
    let holdout = evaluate(&trained, &world.samples(&dataset, &world.train_classes, true))?;
    println!("ancestor: train accuracy {acc:.3}, holdout {holdout:.3}");

    let structure = init_random_structure(&spec, 0.5, &mut seed::from_seed(1))?;
    let gene = extract_learngene(&trained, &structure)?.with_ids("example", None);
    println!("gene: kernels {:?}, {} parameters", structure.kernel_sizes(), gene.parameter_count());

    let targets = [
        builtin_spec("mini-vgg-6")?,
        builtin_spec("mini-vgg-6")?.map_widths("mini-vgg-6-wide", |w| w * 2),
        builtin_spec("mini-vgg-8")?,
        builtin_spec("mini-res-6")?,
    ];
    for target in targets {
        let (net, plan) = inherit_with_plan(&gene, &target, &InheritOptions::default(), &mut seed::from_seed(2))?;
        println!(
            "{:<16} {:>8} parameters, reindexed {}, PIM after {:?}, skips {:?}",
            target.name,
            net.parameter_count(),
            plan.reindexed,
            plan.pim_positions,
            plan.skips
        );
    }
    Ok(())
}
