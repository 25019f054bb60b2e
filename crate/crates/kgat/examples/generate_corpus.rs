//! Generate a synthetic claim-verification corpus and look inside it.
//!
//! Claims are entity/attribute statements ("e12 has a7 ..."); candidate
//! evidence sentences either verify the claim, refute it with a negation
//! token, or talk about something else. A configurable fraction of the
//! verifiable claims splits its golden evidence across two sentences, so
//! a verifier must aggregate.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example generate_corpus
//! ```

use kgat::data::{self, Label, SynthConfig, EVIDENCE_PER_CLAIM};
use kgat::error::Result;

fn main() -> Result<()> {
    let config = SynthConfig {
        seed: 7,
        train: 300,
        dev: 100,
        multi_frac: 0.3,
        ..SynthConfig::default()
    };
    let corpus = data::generate(&config)?;
    println!(
        "generated {} train / {} dev claims, {} vocabulary tokens\n",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.vocab.len()
    );

    // Label balance and evidence shape of the training split.
    let mut counts = [0usize; 3];
    let mut multi = 0usize;
    for inst in &corpus.train {
        counts[inst.label.index()] += 1;
        if inst.golden_union().len() > 1 {
            multi += 1;
        }
    }
    for (i, n) in counts.iter().enumerate() {
        println!("{:>16}: {n}", Label::from_index(i).as_str());
    }
    println!("{:>16}: {multi} (two golden sentences)\n", "multi-evidence");

    // Show one claim of each label with its candidates.
    for want in [Label::Supports, Label::Refutes, Label::NotEnoughInfo] {
        let inst = corpus
            .train
            .iter()
            .find(|c| c.label == want)
            .expect("every label occurs");
        println!("claim {} [{}]: {}", inst.claim_id, inst.label.as_str(), inst.claim_tokens.join(" "));
        for cand in &inst.candidates {
            let marker = if inst.is_golden(cand) { "golden" } else { "      " };
            println!(
                "  {marker}  {}#{} (score {:.2}): {} | {}",
                cand.doc_id,
                cand.sent_idx,
                cand.retrieval_score,
                cand.title_tokens.join(" "),
                cand.sentence_tokens.join(" ")
            );
        }
        println!();
    }

    // Preparation fixes the candidate count per claim: top slots by
    // retrieval score, padded if a claim has fewer.
    let mut prepared = corpus.train[0].clone();
    data::prepare_candidates(&mut prepared, EVIDENCE_PER_CLAIM, true);
    println!(
        "claim {} prepared to {} evidence slots ({} real, {} padding)",
        prepared.claim_id,
        prepared.candidates.len(),
        prepared.candidates.iter().filter(|c| !c.is_pad()).count(),
        prepared.candidates.iter().filter(|c| c.is_pad()).count()
    );
    Ok(())
}
