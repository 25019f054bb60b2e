//! Validate every recorded gradient against finite differences.
//!
//! The training graph is recorded on a tape and differentiated in
//! reverse mode; this example nudges each parameter entry by ±1e-5,
//! reruns the forward pass, and compares the central-difference slope
//! with the tape's gradient — in all four attention modes.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example check_gradients
//! ```

use kgat::error::Result;
use kgat::gradcheck::{builtin_case, check_model};
use kgat::model::{AblationMode, Model, ModelConfig, StateSource};

fn main() -> Result<()> {
    let (vocab, instance) = builtin_case();
    let config = ModelConfig {
        dim: 8,
        kernels: 7,
        evidence_slots: instance.candidates.len(),
        max_len: 32,
    };

    for mode in AblationMode::ALL {
        let mut model = Model::new(config.clone(), vocab.clone(), mode, 17)?;
        // Score heads initialize to zero; random values activate every
        // gradient path before checking it.
        model.params.randomize(17, 0.4);
        let report = check_model(&mut model, &instance, &StateSource::Trainable, 1)?;
        println!("=== mode {mode} ===");
        print!("{}", report.render());
        println!();
    }
    Ok(())
}
