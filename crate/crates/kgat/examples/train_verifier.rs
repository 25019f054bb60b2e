//! Train a claim verifier end to end, checkpoint it, and score it.
//!
//! Uses a small synthetic corpus so the whole run finishes in about a
//! minute on one core. The pipeline is the same one the `kgat` binary
//! drives: generate → prepare candidates → train with warmup + gradient
//! accumulation → keep the best-dev parameters → save → reload →
//! evaluate.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example train_verifier
//! ```

use kgat::checkpoint;
use kgat::data::{self, SynthConfig, EVIDENCE_PER_CLAIM};
use kgat::error::Result;
use kgat::metrics;
use kgat::model::AblationMode;
use kgat::train::{self, EvidenceMode, TrainConfig};

fn main() -> Result<()> {
    // A corpus small enough for a demo run: 400 train / 100 dev claims,
    // 30% of verifiable claims needing two golden sentences.
    let corpus = data::generate(&SynthConfig {
        seed: 7,
        train: 400,
        dev: 100,
        ..SynthConfig::default()
    })?;
    let prepare = |set: &[data::ClaimInstance], force_golden: bool| {
        set.iter()
            .map(|inst| {
                let mut c = inst.clone();
                data::prepare_candidates(&mut c, EVIDENCE_PER_CLAIM, force_golden);
                c
            })
            .collect::<Vec<_>>()
    };
    let train_set = prepare(&corpus.train, true);
    let dev_set = prepare(&corpus.dev, false);

    let config = TrainConfig {
        dim: 16,
        epochs: 12,
        ..TrainConfig::default()
    };
    println!(
        "training: {} claims, dim {}, {} kernels, {} epochs\n",
        train_set.len(),
        config.dim,
        config.kernels,
        config.epochs
    );
    let result = train::train(&config, AblationMode::Full, 7, &train_set, &dev_set)?;
    for epoch in &result.history.epochs {
        println!(
            "epoch {:>2}: train loss {:.4}, dev accuracy {:.3}",
            epoch.epoch, epoch.train_loss, epoch.dev_label_accuracy
        );
    }
    println!(
        "\nbest dev accuracy {:.3} at epoch {}\n",
        result.best_accuracy, result.best_epoch
    );

    // Round-trip through a checkpoint, then evaluate the reloaded model.
    let dir = std::env::temp_dir().join("kgat-train-verifier");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("model.ckpt");
    checkpoint::save(&path, &result.model, &result.adam, 7)?;
    let (model, _adam, _seed) = checkpoint::load(&path)?;
    println!("checkpoint round trip via {}\n", path.display());

    let eval = train::evaluate(&model, &dev_set, EvidenceMode::Retrieved)?;
    let prf = metrics::evidence_prf(&eval.verdicts)?;
    let at1 = metrics::selection_recall_at_k(&eval.verdicts, 1)?;
    println!("dev label accuracy     {:.3}", eval.label_accuracy);
    println!("dev strict score       {:.3} (label and complete evidence)", eval.strict_score);
    println!(
        "evidence P/R/F1        {:.3} / {:.3} / {:.3}",
        prf.precision, prf.recall, prf.f1
    );
    println!(
        "selection recall@1     {:.3} micro / {:.3} macro",
        at1.micro, at1.macro_avg
    );
    Ok(())
}
