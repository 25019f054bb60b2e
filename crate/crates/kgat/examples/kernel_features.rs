//! Kernel pooling in isolation: turn a similarity matrix into match
//! features.
//!
//! A row of the claim-vs-evidence cosine matrix says how a single claim
//! token relates to every evidence token. Pooling pushes that row through
//! a bank of Gaussian kernels — one razor-thin kernel at 1.0 that fires
//! only on exact matches, plus soft kernels spread over [-0.95, 0.95] —
//! and takes the log of each kernel's summed response. The result is a
//! small feature vector per token that says "how many exact matches,
//! how much near-match mass, how much unrelated mass".
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example kernel_features
//! ```

use kgat::error::Result;
use kgat::kernels::{kernel_pool, KernelBank};
use kgat::tensor::{cosine_matrix, Tensor};

fn main() -> Result<()> {
    let bank = KernelBank::default_bank(11)?;
    println!("kernel bank ({} kernels):", bank.len());
    for k in bank.kernels() {
        println!("  mu {:+.3}  delta {:.3}", k.mu, k.delta);
    }

    // Three "claim token" vectors against four "evidence token" vectors.
    // Rows 0 and 1 have exact counterparts in the evidence; row 2 has
    // only a vague relative.
    let claim = Tensor::from_vec(
        3,
        2,
        vec![
            1.0, 0.0, // matches evidence 0 exactly
            0.0, 1.0, // matches evidence 1 exactly
            0.7, 0.7, // between the two
        ],
    );
    let evidence = Tensor::from_vec(
        4,
        2,
        vec![
            1.0, 0.0, //
            0.0, 1.0, //
            -1.0, 0.0, // opposite of evidence 0
            0.6, 0.8, // close to claim row 2
        ],
    );
    let sims = cosine_matrix(&claim, &evidence);
    println!("\ncosine similarities (claim rows x evidence columns):");
    for i in 0..sims.rows() {
        let row: Vec<String> = (0..sims.cols()).map(|j| format!("{:+.2}", sims.at(i, j))).collect();
        println!("  {}", row.join("  "));
    }

    let rows: Vec<usize> = (0..sims.rows()).collect();
    let cols: Vec<usize> = (0..sims.cols()).collect();
    let features = kernel_pool(&sims, &rows, &cols, &bank)?;

    println!("\npooled log-kernel features per claim token:");
    println!("(first column = exact-match kernel; exp of it counts exact matches)");
    for i in 0..features.rows() {
        let row: Vec<String> = (0..features.cols())
            .map(|j| format!("{:+6.2}", features.at(i, j)))
            .collect();
        println!("  token {i}: {}", row.join(" "));
        println!(
            "           exact matches ~ {:.3}",
            features.at(i, 0).exp()
        );
    }

    // The exact-match kernel separates "one exact match" from "none":
    // that difference is what lets attention find the sentence that
    // actually shares the claim's tokens.
    Ok(())
}
