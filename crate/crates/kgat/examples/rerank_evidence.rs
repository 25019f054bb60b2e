//! Train the kernel-based sentence reranker and show what it does to a
//! claim's candidate list.
//!
//! Retrieval hands each claim a pool of candidate sentences ordered by a
//! noisy relevance score. The reranker re-scores every candidate against
//! the claim with cosine match kernels and a pairwise hinge loss, so
//! golden sentences climb to the top of the pool before the verifier
//! sees them. This example trains the reranker, reports golden recall in
//! the top five before and after reranking, and prints one claim's
//! candidate list in both orders.
//!
//! Run with:
//!
//! ```text
//! cargo run --release --example rerank_evidence
//! ```

use kgat::data::{self, SynthConfig};
use kgat::error::Result;
use kgat::ranker::{self, RankerConfig};

fn main() -> Result<()> {
    let corpus = data::generate(&SynthConfig {
        seed: 13,
        train: 300,
        dev: 120,
        ..SynthConfig::default()
    })?;

    let config = RankerConfig::default();
    println!(
        "training reranker: dim {}, {} kernels, {} epochs, {} claims",
        config.dim,
        config.kernels,
        config.epochs,
        corpus.train.len()
    );
    let (ranker, history) = ranker::train_ranker(&config, 7, &corpus.train)?;
    for epoch in &history {
        println!(
            "  epoch {:>2}  {} hinge pairs  mean loss {:.4}",
            epoch.epoch, epoch.pairs, epoch.mean_loss
        );
    }

    // Retrieval-order recall vs reranked recall on held-out claims.
    let before = recall_by_retrieval(&corpus.dev, 5);
    let after = ranker::recall_at_k(&ranker, &corpus.dev, 5)?;
    println!("\ngolden recall in top 5: retrieval order {before:.3}, reranked {after:.3}");

    // Walk one verifiable claim through the reranker.
    let inst = corpus
        .dev
        .iter()
        .find(|c| !c.golden_sets.is_empty() && c.candidates.len() > 5)
        .expect("dev set contains a verifiable claim with a deep pool");
    let gold = inst.golden_union();
    println!("\nclaim: {}", inst.claim_tokens.join(" "));

    println!("\nretrieval order:");
    let mut by_retrieval: Vec<usize> = (0..inst.candidates.len()).collect();
    by_retrieval.sort_by(|&a, &b| {
        inst.candidates[b]
            .retrieval_score
            .partial_cmp(&inst.candidates[a].retrieval_score)
            .unwrap()
    });
    for &i in &by_retrieval {
        print_candidate(inst, i, inst.candidates[i].retrieval_score, &gold);
    }

    println!("\nreranked:");
    for (i, score) in ranker.rank(inst)? {
        print_candidate(inst, i, score, &gold);
    }
    Ok(())
}

fn print_candidate(
    inst: &data::ClaimInstance,
    index: usize,
    score: f64,
    gold: &std::collections::BTreeSet<(String, u32)>,
) {
    let c = &inst.candidates[index];
    let marker = if gold.contains(&(c.doc_id.clone(), c.sent_idx)) {
        "GOLD"
    } else {
        "    "
    };
    println!(
        "  {marker} {score:>8.3}  ({}, {})  {}",
        c.doc_id,
        c.sent_idx,
        c.sentence_tokens.join(" ")
    );
}

/// Fraction of golden sentences that retrieval order alone places in the
/// top `k` candidates, over all verifiable claims.
fn recall_by_retrieval(instances: &[data::ClaimInstance], k: usize) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for inst in instances {
        let gold = inst.golden_union();
        if gold.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..inst.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            inst.candidates[b]
                .retrieval_score
                .partial_cmp(&inst.candidates[a].retrieval_score)
                .unwrap()
        });
        let top: Vec<_> = order
            .iter()
            .take(k)
            .map(|&i| {
                (
                    inst.candidates[i].doc_id.clone(),
                    inst.candidates[i].sent_idx,
                )
            })
            .collect();
        for g in &gold {
            total += 1;
            if top.contains(g) {
                hit += 1;
            }
        }
    }
    if total == 0 { 0.0 } else { hit as f64 / total as f64 }
}
