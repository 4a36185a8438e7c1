//! Checks tape gradients against central differences, scope by scope.
//!
//! `cargo run --release --example gradients -- [ops|shading|losses|full]`

use facefit::gradcheck::{self, GradcheckConfig, Scope};

fn main() -> facefit::Result<()> {
    let scope: Scope = std::env::args().nth(1).as_deref().unwrap_or("shading").parse()?;
    let items = gradcheck::run(scope, &GradcheckConfig::default())?;
    for it in &items {
        println!(
            "{:<28} {:>9.2e} over {:>4} entries {}",
            it.name,
            it.report.max_rel_err,
            it.report.checked,
            if it.passed() { "ok" } else { "FAIL" }
        );
    }
    let bad = items.iter().filter(|i| !i.passed()).count();
    println!("{} items, {bad} over tolerance {:e}", items.len(), gradcheck::TOLERANCE);
    Ok(())
}
