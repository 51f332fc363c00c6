//! Procedural dataset generation, the flat-records file format, and the
//! world partition used by evolution.

use learngene::dataset::{load_dataset, DatasetFormat};
use learngene::evolution::partition_world;
use learngene::synthetic::{generate, SyntheticOptions};

fn main() -> learngene::Result<()> {
    let ds = generate(&SyntheticOptions {
        size: 32,
        per_class: 40,
        ..Default::default()
    })?;
    println!("{} images of {:?}, classes {:?}", ds.len(), ds.header.image_shape, ds.header.class_names);

    let small = ds.downsample2();
    let path = std::env::temp_dir().join("learngene-example.lgds");
    small.save_flat(&path)?;
    let back = load_dataset(&path, DatasetFormat::FlatRecords)?;
    assert_eq!(back, small);
    println!(
        "downsampled to {:?} and round-tripped through {} ({} bytes)",
        back.header.image_shape,
        path.display(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );

    let world = partition_world(&back, 8, 2, 0.2, 3)?;
    println!(
        "train classes {:?}, validation {:?}, novelty {:?}",
        world.train_classes, world.val_classes, world.novelty_classes
    );
    println!(
        "class {}: {} train / {} holdout images",
        world.val_classes[0],
        world.train_split[world.val_classes[0]].len(),
        world.holdout_split[world.val_classes[0]].len()
    );
    Ok(())
}
