//! Finite-difference check of every layer's backward pass.

use flextune::gradcheck::{check_kind, tolerance, LAYER_KINDS};

fn main() -> flextune::Result<()> {
    for kind in LAYER_KINDS {
        let worst = check_kind(kind, 50, 1e-3, 7)?;
        println!("{kind:<10} worst relative error {worst:.2e} (tolerance {:.0e})", tolerance());
    }
    Ok(())
}
