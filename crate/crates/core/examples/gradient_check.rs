//! Central finite differences against every op, a ViT block and the MAE loss.
//!
//! cargo run --example gradient_check

use maeforge::gradcheck::{suite, TOLERANCE};

fn main() -> maeforge::Result<()> {
    let checks = suite()?;
    for c in &checks {
        println!("{:<28} {:>9.2e}  ({} inputs)", c.name, c.max_rel_err, c.probed);
    }
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    println!("worst {worst:.2e} against tolerance {TOLERANCE:.0e}");
    Ok(())
}
