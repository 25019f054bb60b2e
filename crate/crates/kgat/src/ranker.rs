//! Kernel-based evidence reranking.
//!
//! The ranker scores a candidate sentence against a claim directly from
//! token interactions: cosine similarities between projected claim and
//! sentence token states are pooled through the Gaussian kernel bank,
//! averaged over claim tokens, and mapped to a scalar. Training uses a
//! pairwise hinge — every golden sentence is pushed at least a unit
//! margin above one sampled non-golden sentence from the same claim.
//!
//! Reranking rewrites each claim's retrieval scores with ranker scores
//! and reorders candidates accordingly, so downstream preparation keeps
//! the ranker's top sentences.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::checkpoint::{fmt_row, Reader};
use crate::data::{ClaimInstance, EvidenceSentence, Vocabulary};
use crate::error::{KgatError, Result};
use crate::fsio;
use crate::kernels::KernelBank;
use crate::optim::Adam;
use crate::params::{uniform_init, xavier_init, ParamSet};
use crate::tape::{Tape, Var};

const HEADER: &str = "kgat-ranker v1";

/// Hyperparameters of a reranking run.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerConfig {
    pub dim: usize,
    pub kernels: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Hinge pairs per optimizer step.
    pub batch_pairs: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            dim: 16,
            kernels: 21,
            learning_rate: 1e-2,
            epochs: 3,
            batch_pairs: 16,
        }
    }
}

/// The reranker: its own embedding, projection, and kernel score head,
/// independent of the verification model.
#[derive(Debug, Clone)]
pub struct Ranker {
    pub dim: usize,
    pub vocab: Vocabulary,
    pub bank: KernelBank,
    pub params: ParamSet,
}

impl Ranker {
    pub fn new(dim: usize, kernels: usize, vocab: Vocabulary, seed: u64) -> Result<Ranker> {
        if dim == 0 {
            return Err(KgatError::Usage("ranker dim must be positive".into()));
        }
        let bank = KernelBank::default_bank(kernels)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add("rank.embed", uniform_init(&mut rng, vocab.len(), dim, 0.5));
        params.add("rank.proj.w", xavier_init(&mut rng, dim, dim));
        params.add("rank.proj.b", crate::tensor::Tensor::zeros(1, dim));
        params.add("rank.score.w", xavier_init(&mut rng, 1, kernels));
        params.add("rank.score.b", crate::tensor::Tensor::zeros(1, 1));
        Ok(Ranker {
            dim,
            vocab,
            bank,
            params,
        })
    }

    /// Token states for a plain token list (no special positions).
    fn states(&self, tape: &mut Tape, bound: &[Var], tokens: &[String]) -> Var {
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.id(t)).collect();
        let gathered = tape.gather_rows(bound[0], &ids);
        tape.affine(gathered, bound[1], bound[2])
    }

    /// Score one claim/sentence pair on the tape: kernel-pool the cosine
    /// matrix between claim tokens and title+body tokens, average over
    /// claim tokens, and apply the scoring head.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        claim_tokens: &[String],
        sentence: &EvidenceSentence,
    ) -> Result<Var> {
        if claim_tokens.is_empty() {
            return Err(KgatError::Data("ranker got an empty claim".into()));
        }
        let text: Vec<String> = sentence
            .title_tokens
            .iter()
            .chain(&sentence.sentence_tokens)
            .cloned()
            .collect();
        if text.is_empty() {
            return Err(KgatError::Data(format!(
                "ranker got an empty sentence {}/{}",
                sentence.doc_id, sentence.sent_idx
            )));
        }
        let claim = self.states(tape, bound, claim_tokens);
        let evid = self.states(tape, bound, &text);
        let m = tape.cosine(claim, evid);
        let rows: Vec<usize> = (0..claim_tokens.len()).collect();
        let cols: Vec<usize> = (0..text.len()).collect();
        let pooled = tape.kernel_pool(m, &rows, &cols, &self.bank)?;
        let phi = tape.mean_rows(pooled, &rows);
        Ok(tape.affine(phi, bound[3], bound[4]))
    }

    /// Plain score of one pair (forward only).
    pub fn score(&self, claim_tokens: &[String], sentence: &EvidenceSentence) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let s = self.score_on_tape(&mut tape, &bound, claim_tokens, sentence)?;
        Ok(tape.value(s).at(0, 0))
    }

    /// Candidate indices with ranker scores, sorted by descending score;
    /// ties resolve by `(doc_id, sent_idx)`. Padding slots are excluded.
    pub fn rank(&self, instance: &ClaimInstance) -> Result<Vec<(usize, f64)>> {
        let mut scored = Vec::new();
        for (i, c) in instance.candidates.iter().enumerate() {
            if c.is_pad() {
                continue;
            }
            scored.push((i, self.score(&instance.claim_tokens, c)?));
        }
        scored.sort_by(|a, b| {
            let ca = &instance.candidates[a.0];
            let cb = &instance.candidates[b.0];
            b.1.partial_cmp(&a.1)
                .expect("ranker scores are finite")
                .then_with(|| ca.doc_id.cmp(&cb.doc_id))
                .then_with(|| ca.sent_idx.cmp(&cb.sent_idx))
        });
        Ok(scored)
    }

    /// Replace retrieval scores with ranker scores and reorder the
    /// candidates of every claim accordingly.
    pub fn rerank(&self, instances: &mut [ClaimInstance]) -> Result<()> {
        for inst in instances.iter_mut() {
            let order = self.rank(inst)?;
            let mut next = Vec::with_capacity(inst.candidates.len());
            for &(i, score) in &order {
                let mut c = inst.candidates[i].clone();
                c.retrieval_score = score;
                next.push(c);
            }
            // Padding slots, if any, stay at the back.
            for c in &inst.candidates {
                if c.is_pad() {
                    next.push(c.clone());
                }
            }
            inst.candidates = next;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str(HEADER);
        text.push('\n');
        text.push_str(&format!("dim {}\n", self.dim));
        text.push_str(&format!("kernels {}\n", self.bank.len()));
        text.push_str(&format!("vocab {}\n", self.vocab.len()));
        for t in self.vocab.tokens() {
            text.push_str(t);
            text.push('\n');
        }
        text.push_str(&format!("bank {}\n", self.bank.len()));
        for k in self.bank.kernels() {
            text.push_str(&format!("{:.16e} {:.16e}\n", k.mu, k.delta));
        }
        text.push_str(&format!("params {}\n", self.params.len()));
        for i in 0..self.params.len() {
            let p = self.params.get(i);
            text.push_str(&format!(
                "param {} {} {}\n",
                p.name,
                p.value.rows(),
                p.value.cols()
            ));
            for r in 0..p.value.rows() {
                text.push_str(&fmt_row(p.value.row(r)));
                text.push('\n');
            }
        }
        text.push_str("end\n");
        fsio::atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Ranker> {
        let text = fsio::read_to_string(path)?;
        let mut r = Reader {
            path,
            lines: text.lines(),
            line_no: 0,
        };
        let header = r.next("the header")?;
        if header != HEADER {
            return Err(r.err(format!("unsupported ranker header {header:?}")));
        }
        let dim: usize = r.field("dim")?;
        let kernels: usize = r.field("kernels")?;
        let vocab_len: usize = r.field("vocab")?;
        let mut tokens = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            tokens.push(r.next("a vocabulary token")?.to_string());
        }
        let vocab = Vocabulary::from_tokens(tokens)?;
        let bank_len: usize = r.field("bank")?;
        if bank_len != kernels {
            return Err(KgatError::ConfigMismatch(format!(
                "bank holds {bank_len} kernels, header says {kernels}"
            )));
        }
        let mut ks = Vec::with_capacity(bank_len);
        for _ in 0..bank_len {
            let row = r.float_row(2)?;
            ks.push(crate::kernels::Kernel {
                mu: row[0],
                delta: row[1],
            });
        }
        let bank = KernelBank::new(ks)?;
        let count: usize = r.field("params")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let (name, rows, cols) = r.tensor_header("param")?;
            let value = r.tensor(rows, cols)?;
            params.add(&name, value);
        }
        let tail = r.next("the end marker")?;
        if tail != "end" {
            return Err(r.err(format!("expected end marker, got {tail:?}")));
        }
        Ok(Ranker {
            dim,
            vocab,
            bank,
            params,
        })
    }
}

/// Pairwise hinge `max(0, 1 - s_pos + s_neg)` built from two scalar
/// score variables.
pub fn hinge_on_tape(tape: &mut Tape, s_pos: Var, s_neg: Var) -> Var {
    let pair = tape.concat_cols(s_pos, s_neg);
    let w = tape.constant(crate::tensor::Tensor::from_vec(1, 2, vec![-1.0, 1.0]));
    let b = tape.constant(crate::tensor::Tensor::from_vec(1, 1, vec![1.0]));
    let margin = tape.affine(pair, w, b);
    tape.relu(margin)
}

/// One positive/negative training pair within a claim.
#[derive(Debug, Clone, Copy)]
struct HingePair {
    claim: usize,
    positive: usize,
    negative: usize,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerEpoch {
    pub epoch: usize,
    pub pairs: usize,
    pub mean_loss: f64,
}

/// Train a reranker on prepared or raw claims. Claims contribute one
/// hinge pair per golden candidate, with the negative drawn uniformly
/// from the claim's non-golden candidates.
pub fn train_ranker(
    config: &RankerConfig,
    seed: u64,
    train_set: &[ClaimInstance],
) -> Result<(Ranker, Vec<RankerEpoch>)> {
    if train_set.is_empty() {
        return Err(KgatError::Data("empty ranker training set".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(KgatError::Usage(format!(
            "learning_rate must be positive, got {}",
            config.learning_rate
        )));
    }
    if config.batch_pairs == 0 {
        return Err(KgatError::Usage("batch_pairs must be positive".into()));
    }
    let vocab = Vocabulary::build(train_set);
    let mut ranker = Ranker::new(config.dim, config.kernels, vocab, seed)?;
    let mut adam = Adam::new(&ranker.params);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        // Sample this epoch's hinge pairs, claim by claim.
        let mut pairs = Vec::new();
        for (ci, inst) in train_set.iter().enumerate() {
            let golden: Vec<usize> = (0..inst.candidates.len())
                .filter(|&i| {
                    !inst.candidates[i].is_pad() && inst.is_golden(&inst.candidates[i])
                })
                .collect();
            let other: Vec<usize> = (0..inst.candidates.len())
                .filter(|&i| {
                    !inst.candidates[i].is_pad() && !inst.is_golden(&inst.candidates[i])
                })
                .collect();
            if other.is_empty() {
                continue;
            }
            for &positive in &golden {
                let negative = other[rng.random_range(0..other.len())];
                pairs.push(HingePair {
                    claim: ci,
                    positive,
                    negative,
                });
            }
        }
        if pairs.is_empty() {
            return Err(KgatError::Data(
                "no claim provides both golden and non-golden candidates".into(),
            ));
        }

        let mut loss_sum = 0.0;
        for batch in pairs.chunks(config.batch_pairs) {
            ranker.params.zero_grads();
            for pair in batch {
                let inst = &train_set[pair.claim];
                let mut tape = Tape::new();
                let bound = ranker.params.bind(&mut tape);
                let s_pos = ranker.score_on_tape(
                    &mut tape,
                    &bound,
                    &inst.claim_tokens,
                    &inst.candidates[pair.positive],
                )?;
                let s_neg = ranker.score_on_tape(
                    &mut tape,
                    &bound,
                    &inst.claim_tokens,
                    &inst.candidates[pair.negative],
                )?;
                let loss = hinge_on_tape(&mut tape, s_pos, s_neg);
                let value = tape.value(loss).at(0, 0);
                if !value.is_finite() {
                    return Err(KgatError::Numeric(format!(
                        "non-finite hinge loss on claim {}",
                        inst.claim_id
                    )));
                }
                loss_sum += value;
                tape.backward(loss)?;
                ranker.params.accumulate_from(&tape);
            }
            ranker.params.scale_grads(1.0 / batch.len() as f64);
            adam.step(&mut ranker.params, config.learning_rate)?;
        }
        history.push(RankerEpoch {
            epoch,
            pairs: pairs.len(),
            mean_loss: loss_sum / pairs.len() as f64,
        });
    }
    Ok((ranker, history))
}

/// Micro-averaged coverage of golden sentences by the ranker's top-k
/// candidates, over verifiable claims.
pub fn recall_at_k(ranker: &Ranker, instances: &[ClaimInstance], k: usize) -> Result<f64> {
    let mut covered = 0usize;
    let mut total = 0usize;
    for inst in instances {
        let golden = inst.golden_union();
        if golden.is_empty() {
            continue;
        }
        let top = ranker.rank(inst)?;
        covered += top
            .iter()
            .take(k)
            .filter(|&&(i, _)| {
                let id = inst.candidates[i].id();
                golden.contains(&id)
            })
            .count();
        total += golden.len();
    }
    if total == 0 {
        return Err(KgatError::Data(
            "recall needs at least one claim with golden evidence".into(),
        ));
    }
    Ok(covered as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, prepare_candidates, SynthConfig};
    use crate::tape::testcheck::check_gradients;
    use crate::tensor::Tensor;

    fn corpus(n: usize) -> Vec<ClaimInstance> {
        generate(&SynthConfig {
            train: n,
            dev: 1,
            entities: 8,
            attributes: 6,
            ..SynthConfig::default()
        })
        .unwrap()
        .train
    }

    #[test]
    fn hinge_matches_hand_computed_values() {
        let cases = [
            ((2.0, 0.0), 0.0),
            ((1.0, 1.0), 1.0),
            ((0.0, 2.0), 3.0),
            ((0.25, 0.0), 0.75),
        ];
        for ((pos, neg), want) in cases {
            let mut tape = Tape::new();
            let p = tape.constant(Tensor::from_vec(1, 1, vec![pos]));
            let n = tape.constant(Tensor::from_vec(1, 1, vec![neg]));
            let h = hinge_on_tape(&mut tape, p, n);
            assert_eq!(tape.value(h).at(0, 0), want, "hinge({pos}, {neg})");
        }
    }

    #[test]
    fn hinge_gradients_match_finite_differences() {
        let inputs = vec![
            Tensor::from_vec(1, 1, vec![0.3]),
            Tensor::from_vec(1, 1, vec![0.9]),
        ];
        check_gradients(
            &inputs,
            |tape, vars| hinge_on_tape(tape, vars[0], vars[1]),
            1e-6,
        );
    }

    #[test]
    fn zero_parameters_rank_by_sentence_identity() {
        let insts = corpus(5);
        let vocab = Vocabulary::build(&insts);
        let mut ranker = Ranker::new(4, 3, vocab, 1).unwrap();
        for i in 0..ranker.params.len() {
            ranker.params.get_mut(i).value.clear();
        }
        let order = ranker.rank(&insts[0]).unwrap();
        // All scores are zero, so ordering falls back to (doc, sent).
        let ids: Vec<_> = order
            .iter()
            .map(|&(i, _)| insts[0].candidates[i].id())
            .collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert!(order.iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn training_learns_to_put_golden_evidence_on_top() {
        let insts = corpus(60);
        let cfg = RankerConfig {
            dim: 8,
            kernels: 5,
            epochs: 6,
            learning_rate: 2e-2,
            ..RankerConfig::default()
        };
        let fresh = Ranker::new(cfg.dim, cfg.kernels, Vocabulary::build(&insts), 7).unwrap();
        let before = recall_at_k(&fresh, &insts, 5).unwrap();
        let (ranker, history) = train_ranker(&cfg, 7, &insts).unwrap();
        let after = recall_at_k(&ranker, &insts, 5).unwrap();
        assert_eq!(history.len(), cfg.epochs);
        assert!(history.last().unwrap().mean_loss < history[0].mean_loss);
        assert!(
            after >= before && after >= 0.85,
            "recall@5 {before} -> {after}"
        );
    }

    #[test]
    fn reranking_rewrites_scores_and_feeds_preparation() {
        let insts = corpus(40);
        let cfg = RankerConfig {
            dim: 8,
            kernels: 5,
            epochs: 8,
            learning_rate: 2e-2,
            ..RankerConfig::default()
        };
        let (ranker, _) = train_ranker(&cfg, 11, &insts).unwrap();
        let mut ranked = insts.clone();
        ranker.rerank(&mut ranked).unwrap();
        for (orig, inst) in insts.iter().zip(&ranked) {
            assert_eq!(orig.candidates.len(), inst.candidates.len());
            // Scores are descending over non-padding candidates.
            let scores: Vec<f64> = inst
                .candidates
                .iter()
                .filter(|c| !c.is_pad())
                .map(|c| c.retrieval_score)
                .collect();
            assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        }
        // Preparation after reranking keeps mostly golden-on-top claims.
        let mut prepared = ranked.clone();
        let mut covered = 0usize;
        let mut total = 0usize;
        for inst in &mut prepared {
            prepare_candidates(inst, 5, false);
            let golden = inst.golden_union();
            if golden.is_empty() {
                continue;
            }
            covered += inst
                .candidates
                .iter()
                .filter(|c| !c.is_pad() && golden.contains(&c.id()))
                .count();
            total += golden.len();
        }
        assert!(covered as f64 / total as f64 >= 0.85);
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let insts = corpus(10);
        let (ranker, _) = train_ranker(
            &RankerConfig {
                dim: 4,
                kernels: 3,
                epochs: 1,
                ..RankerConfig::default()
            },
            3,
            &insts,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranker.ckpt");
        ranker.save(&path).unwrap();
        let loaded = Ranker::load(&path).unwrap();
        assert_eq!(loaded.dim, ranker.dim);
        assert_eq!(loaded.vocab, ranker.vocab);
        assert_eq!(loaded.bank, ranker.bank);
        for i in 0..ranker.params.len() {
            assert_eq!(
                loaded.params.get(i).value.data(),
                ranker.params.get(i).value.data()
            );
        }
        // Scores agree bit for bit.
        let inst = &insts[0];
        let c = &inst.candidates[0];
        assert_eq!(
            ranker.score(&inst.claim_tokens, c).unwrap(),
            loaded.score(&inst.claim_tokens, c).unwrap()
        );
        // Damaged header is rejected.
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("v1", "v7", 1)).unwrap();
        assert!(Ranker::load(&path).is_err());
    }

    #[test]
    fn training_needs_contrastive_claims() {
        let mut insts = corpus(4);
        // Strip every non-golden candidate so no negatives exist.
        for inst in &mut insts {
            let golden = inst.golden_union();
            inst.candidates.retain(|c| golden.contains(&c.id()));
        }
        insts.retain(|i| !i.candidates.is_empty());
        let err = train_ranker(
            &RankerConfig {
                dim: 4,
                kernels: 3,
                epochs: 1,
                ..RankerConfig::default()
            },
            3,
            &insts,
        );
        assert!(matches!(err, Err(KgatError::Data(_))));
    }
}
