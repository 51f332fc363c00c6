//! Random gene structures and the kernel-level mutation operator.

use learngene::genome::{growth_probability, init_random_structure, mutate_traced, validate_structure, MutationParams};
use learngene::netspec::{builtin_spec, parameter_fraction};
use learngene::seed;

fn main() -> learngene::Result<()> {
    println!("growth probability for a 64-wide layer, alpha 1.0:");
    for k in [0, 8, 16, 32, 48, 64] {
        println!("  |K| = {k:>2}: {:.3}", growth_probability(k, 64, 1.0)?);
    }

    let spec = builtin_spec("mini-res-6")?;
    let mut rng = seed::from_seed(7);
    let mut structure = init_random_structure(&spec, 0.5, &mut rng)?;
    println!(
        "\ninitial kernels per layer {:?}, {:.1}% of conv and skip weights",
        structure.kernel_sizes(),
        100.0 * parameter_fraction(&structure, &spec)?
    );
    let params = MutationParams {
        p_m: 0.5,
        ..Default::default()
    };
    for step in 1..=5 {
        let (next, events) = mutate_traced(&structure, &params, &mut rng);
        assert!(validate_structure(&next, &spec).is_empty());
        let summary: Vec<String> = events.iter().map(|e| format!("L{}:{:?}", e.layer_id, e.outcome)).collect();
        println!(
            "step {step}: {:?} ({:.1}%) after [{}]",
            next.kernel_sizes(),
            100.0 * parameter_fraction(&next, &spec)?,
            summary.join(", ")
        );
        structure = next;
    }
    for skip in structure.layers.iter().filter(|g| g.skip_endpoints.is_some()) {
        println!("skip layer {} owns {} x {} slices", skip.layer_id, skip.kernels.len(), skip.channels.len());
    }
    Ok(())
}
