//! Analytic gradients against central finite differences.
//!
//! ```text
//! cargo run --release --example grad_check -- [spec ...]
//! ```

use learngene::engine::grad_check;
use learngene::netspec::builtin_spec;

fn main() -> learngene::Result<()> {
    let mut names: Vec<String> = std::env::args().skip(1).collect();
    if names.is_empty() {
        names = vec!["mini-vgg-6".into(), "mini-res-6".into()];
    }
    for name in names {
        let spec = builtin_spec(&name)?;
        for s in 0..3 {
            let r = grad_check(&spec, s, 10, 2, 1e-3)?;
            println!(
                "{name} seed {s}: {} coordinates {:?}, max relative error {:.2e}, {} redrawn at kinks",
                r.entries.len(),
                r.kinds(),
                r.max_rel_error(),
                r.kinks_skipped
            );
        }
    }
    Ok(())
}
