//! Open up a trained verifier and look at its attention weights.
//!
//! Every forward pass records a trace: the evidence-selection weight of
//! each node, the edge weights flowing into each node from the other
//! candidates, and each node's own label distribution next to the joint
//! one. This example trains a small model, picks a claim whose golden
//! evidence spans two sentences, and prints the whole trace so you can
//! see which sentences the model reads and how much each one contributes
//! to the verdict.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example inspect_attention
//! ```

use kgat::data::{self, SynthConfig, EVIDENCE_PER_CLAIM};
use kgat::error::Result;
use kgat::model::{AblationMode, StateSource};
use kgat::tape::Tape;
use kgat::train::{self, TrainConfig};

fn main() -> Result<()> {
    let corpus = data::generate(&SynthConfig {
        seed: 5,
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
    println!("training {} epochs on {} claims...", config.epochs, train_set.len());
    let result = train::train(&config, AblationMode::Full, 7, &train_set, &dev_set)?;

    // Attention is easiest to read on a claim that needs two sentences.
    let inst = dev_set
        .iter()
        .find(|c| c.golden_union().len() >= 2)
        .expect("dev set contains a two-sentence claim");
    let gold = inst.golden_union();
    let mut tape = Tape::new();
    let trace = result
        .model
        .forward(&mut tape, inst, &StateSource::Trainable)?
        .trace;

    println!("\nclaim: {}", inst.claim_tokens.join(" "));
    println!(
        "label: {}   predicted: {}",
        inst.label.as_str(),
        trace.predicted().as_str()
    );
    println!(
        "joint distribution: SUPPORTS {:.3}  REFUTES {:.3}  NOT ENOUGH INFO {:.3}",
        trace.joint[0], trace.joint[1], trace.joint[2]
    );

    println!("\nnodes (one per candidate sentence):");
    for node in &trace.nodes {
        let cand = &inst.candidates[node.candidate];
        let marker = if gold.contains(&(cand.doc_id.clone(), cand.sent_idx)) {
            "GOLD"
        } else {
            "    "
        };
        println!(
            "  [{}] {marker} selection {:.3}  own verdict S {:.2} / R {:.2} / N {:.2}",
            node.candidate,
            node.selection,
            node.label_dist[0],
            node.label_dist[1],
            node.label_dist[2]
        );
        println!(
            "        ({}, {})  {}",
            cand.doc_id,
            cand.sent_idx,
            cand.sentence_tokens.join(" ")
        );
    }

    println!("\nedge weights (how much each node reads from the others):");
    for node in &trace.nodes {
        let weights: Vec<String> = node
            .source_weights
            .iter()
            .map(|(src, w)| format!("{src}:{w:.3}"))
            .collect();
        println!("  into [{}]: {}", node.candidate, weights.join("  "));
    }

    println!(
        "\nselection concentrates the verdict on few sentences; edge weights\n\
         show each node pulling in the rest of the evidence before voting."
    );
    Ok(())
}
