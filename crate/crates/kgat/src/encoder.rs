//! Claim/evidence pair sequences and the token-state encoder.
//!
//! Each graph node is built from one claim/evidence pair laid out as
//! `[CLS] claim [SEP] title evidence [SEP]`. The encoder produces one
//! state row per position; row 0 (the `[CLS]` slot) holds the node
//! vector `z`, defined as the mean of all real token states.
//!
//! Two encoders satisfy that contract: a trainable one (embedding table
//! followed by a per-token affine map) and a frozen pass-through that
//! reads precomputed state matrices from a file and contributes no
//! parameters.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{ClaimInstance, EvidenceSentence, Vocabulary, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{KgatError, Result};
use crate::fsio;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Maximum sequence length (in token positions, including `[CLS]`).
pub const DEFAULT_MAX_LEN: usize = 130;

/// Token ids and span structure for one claim/evidence node.
///
/// Positions: 0 is the `[CLS]`/node-vector slot, `1..=m` the claim
/// (including its `[SEP]`), `m+1..len` the evidence region (title, then
/// sentence body, then the final `[SEP]`).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSequence {
    pub ids: Vec<usize>,
    /// Number of claim positions (claim tokens plus its `[SEP]`).
    pub claim_len: usize,
    /// True for positions holding real tokens. The whole evidence region
    /// of a padding node is masked so its node vector reflects the claim
    /// only.
    pub real: Vec<bool>,
    /// True when this node wraps the padding sentence.
    pub pad_evidence: bool,
}

impl NodeSequence {
    /// Lay out one claim/evidence pair, truncating the evidence region
    /// (never the claim) to fit `max_len` positions.
    pub fn build(
        claim_tokens: &[String],
        evidence: &EvidenceSentence,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<NodeSequence> {
        // [CLS] + claim + [SEP] + evidence region + [SEP]
        let overhead = 1 + claim_tokens.len() + 1 + 1;
        if overhead >= max_len {
            return Err(KgatError::Data(format!(
                "a {}-token claim leaves no room for evidence at max_len {}",
                claim_tokens.len(),
                max_len
            )));
        }
        let budget = max_len - overhead;
        let mut region: Vec<&String> = evidence
            .title_tokens
            .iter()
            .chain(&evidence.sentence_tokens)
            .collect();
        region.truncate(budget);

        let mut ids = Vec::with_capacity(overhead + region.len());
        ids.push(CLS_ID);
        ids.extend(claim_tokens.iter().map(|t| vocab.id(t)));
        ids.push(SEP_ID);
        let claim_len = ids.len() - 1;
        ids.extend(region.iter().map(|t| vocab.id(t)));
        ids.push(SEP_ID);

        let pad_evidence = evidence.is_pad();
        let real = ids
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                if pos > claim_len && pad_evidence {
                    false
                } else {
                    id != PAD_ID
                }
            })
            .collect();
        Ok(NodeSequence {
            ids,
            claim_len,
            real,
            pad_evidence,
        })
    }

    /// Build the node sequences for every candidate of a claim.
    pub fn build_all(
        instance: &ClaimInstance,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Vec<NodeSequence>> {
        instance
            .candidates
            .iter()
            .map(|c| NodeSequence::build(&instance.claim_tokens, c, vocab, max_len))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Claim positions `1..=claim_len` (always real).
    pub fn claim_positions(&self) -> Vec<usize> {
        (1..=self.claim_len).collect()
    }

    /// Real positions in the evidence region.
    pub fn evidence_positions(&self) -> Vec<usize> {
        (self.claim_len + 1..self.len())
            .filter(|&p| self.real[p])
            .collect()
    }

    /// Real token positions excluding the node-vector slot 0; this is
    /// both the mean pool for `z` and the support of token attention.
    pub fn token_positions(&self) -> Vec<usize> {
        (1..self.len()).filter(|&p| self.real[p]).collect()
    }

    /// Positions other token rows may attend over: the node-vector slot
    /// plus every real token.
    pub fn context_positions(&self) -> Vec<usize> {
        let mut cols = vec![0];
        cols.extend(self.token_positions());
        cols
    }
}

/// Encode a node with the trainable encoder: gather embeddings for
/// positions `1..len`, apply the affine map per token, and write the mean
/// of real token states into row 0.
///
/// Returns the `len x d` state matrix variable.
pub fn encode_trainable(
    tape: &mut Tape,
    embed: Var,
    proj_w: Var,
    proj_b: Var,
    seq: &NodeSequence,
) -> Result<Var> {
    let vocab_rows = tape.value(embed).rows();
    if let Some(&bad) = seq.ids.iter().find(|&&id| id >= vocab_rows) {
        return Err(KgatError::Data(format!(
            "token id {bad} out of range for a {vocab_rows}-row embedding table"
        )));
    }
    let gathered = tape.gather_rows(embed, &seq.ids[1..]);
    let states = tape.affine(gathered, proj_w, proj_b);
    let pool: Vec<usize> = seq.token_positions().iter().map(|p| p - 1).collect();
    let z = tape.mean_rows(states, &pool);
    Ok(tape.vstack(&[z, states]))
}

// ---------------------------------------------------------------------------
// External (frozen) states
// ---------------------------------------------------------------------------

/// Precomputed per-node state matrices keyed by `(claim_id, node index)`.
///
/// The file format is line-oriented text:
///
/// ```text
/// node-states v1
/// dim <d>
/// node <claim_id> <node_idx> <rows>
/// <d space-separated floats>   (x rows)
/// ```
#[derive(Debug, Clone)]
pub struct ExternalStates {
    dim: usize,
    map: HashMap<(String, usize), Tensor>,
}

impl ExternalStates {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, message: String| KgatError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        if header.trim() != "node-states v1" {
            return Err(parse_err(1, format!("unknown header {header:?}")));
        }
        let (_, dim_line) = lines
            .next()
            .ok_or_else(|| parse_err(2, "missing dim line".into()))?;
        let dim: usize = dim_line
            .trim()
            .strip_prefix("dim ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(2, format!("bad dim line {dim_line:?}")))?;

        let mut map = HashMap::new();
        while let Some((i, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "node" {
                return Err(parse_err(i + 1, format!("expected node header, got {line:?}")));
            }
            let claim_id = parts[1].to_string();
            let node_idx: usize = parts[2]
                .parse()
                .map_err(|_| parse_err(i + 1, "bad node index".into()))?;
            let rows: usize = parts[3]
                .parse()
                .map_err(|_| parse_err(i + 1, "bad row count".into()))?;
            let mut data = Vec::with_capacity(rows * dim);
            for _ in 0..rows {
                let (j, row_line) = lines
                    .next()
                    .ok_or_else(|| parse_err(i + 1, "truncated node block".into()))?;
                for v in row_line.split_whitespace() {
                    data.push(v.parse::<f64>().map_err(|_| {
                        parse_err(j + 1, format!("bad float {v:?}"))
                    })?);
                }
                if data.len() % dim != 0 {
                    return Err(parse_err(j + 1, format!("row is not {dim} wide")));
                }
            }
            map.insert((claim_id, node_idx), Tensor::from_vec(rows, dim, data));
        }
        Ok(ExternalStates { dim, map })
    }

    /// Serialize in the documented format (17 significant digits, exact
    /// round trip).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("node-states v1\ndim {}\n", self.dim);
        let mut keys: Vec<&(String, usize)> = self.map.keys().collect();
        keys.sort();
        for key in keys {
            let t = &self.map[key];
            text.push_str(&format!("node {} {} {}\n", key.0, key.1, t.rows()));
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.16e}")).collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
        }
        fsio::atomic_write(path, text.as_bytes())
    }

    pub fn from_map(dim: usize, map: HashMap<(String, usize), Tensor>) -> Self {
        ExternalStates { dim, map }
    }

    /// States for one node; shape-checked against the node's sequence.
    pub fn get(&self, claim_id: &str, node_idx: usize, seq: &NodeSequence) -> Result<&Tensor> {
        let t = self
            .map
            .get(&(claim_id.to_string(), node_idx))
            .ok_or_else(|| {
                KgatError::Data(format!(
                    "no external states for claim {claim_id} node {node_idx}"
                ))
            })?;
        if t.rows() != seq.len() {
            return Err(KgatError::ConfigMismatch(format!(
                "external states for claim {claim_id} node {node_idx} have {} rows, sequence has {}",
                t.rows(),
                seq.len()
            )));
        }
        Ok(t)
    }
}

/// Encode a node from frozen external states: a constant on the tape,
/// no gradients, shape-checked against the sequence.
pub fn encode_external(
    tape: &mut Tape,
    states: &ExternalStates,
    claim_id: &str,
    node_idx: usize,
    seq: &NodeSequence,
) -> Result<Var> {
    let t = states.get(claim_id, node_idx, seq)?;
    Ok(tape.constant(t.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            ["e1", "is", "a1", "t1", "w1", "w2", "w3"]
                .iter()
                .map(|s| s.to_string()),
        )
        .unwrap()
    }

    fn evidence(title: &str, text: &str) -> EvidenceSentence {
        EvidenceSentence {
            doc_id: "d".into(),
            sent_idx: 0,
            title_tokens: title.split_whitespace().map(str::to_string).collect(),
            sentence_tokens: text.split_whitespace().map(str::to_string).collect(),
            retrieval_score: 0.5,
        }
    }

    fn claim() -> Vec<String> {
        vec!["e1".into(), "is".into(), "a1".into()]
    }

    #[test]
    fn layout_and_spans() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "w1 w2"), &v, 130).unwrap();
        let tokens: Vec<&str> = seq.ids.iter().map(|&id| v.token(id)).collect();
        assert_eq!(
            tokens,
            [CLS_TOKEN, "e1", "is", "a1", SEP_TOKEN, "t1", "w1", "w2", SEP_TOKEN]
        );
        assert_eq!(seq.claim_len, 4);
        assert_eq!(seq.claim_positions(), vec![1, 2, 3, 4]);
        assert_eq!(seq.evidence_positions(), vec![5, 6, 7, 8]);
        assert_eq!(seq.token_positions(), (1..9).collect::<Vec<_>>());
        assert_eq!(seq.context_positions()[0], 0);
        assert!(!seq.pad_evidence);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "mystery"), &v, 130).unwrap();
        assert_eq!(v.token(seq.ids[6]), UNK_TOKEN);
    }

    #[test]
    fn pad_evidence_masks_the_evidence_region() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &EvidenceSentence::pad(), &v, 130).unwrap();
        assert!(seq.pad_evidence);
        let tokens: Vec<&str> = seq.ids.iter().map(|&id| v.token(id)).collect();
        assert_eq!(tokens, [CLS_TOKEN, "e1", "is", "a1", SEP_TOKEN, PAD_TOKEN, SEP_TOKEN]);
        // Claim positions stay real; the whole evidence region is masked,
        // trailing separator included.
        assert_eq!(seq.token_positions(), vec![1, 2, 3, 4]);
        assert!(seq.evidence_positions().is_empty());
    }

    #[test]
    fn truncation_trims_evidence_only() {
        let v = vocab();
        let long = evidence("t1", &vec!["w1"; 40].join(" "));
        let seq = NodeSequence::build(&claim(), &long, &v, 20).unwrap();
        assert_eq!(seq.len(), 20);
        assert_eq!(seq.claim_len, 4);
        assert_eq!(seq.ids[19], SEP_ID);
        // Claim does not fit at all -> error.
        let tiny = NodeSequence::build(&vec!["e1".into(); 30], &long, &v, 20);
        assert!(tiny.is_err());
    }

    #[test]
    fn trainable_encoder_writes_mean_into_row_zero() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "w1"), &v, 130).unwrap();
        let d = 3;
        let mut tape = Tape::new();
        // Embedding row for id i is [i, 2i, 3i]; identity projection.
        let table = Tensor::from_vec(
            v.len(),
            d,
            (0..v.len())
                .flat_map(|i| vec![i as f64, 2.0 * i as f64, 3.0 * i as f64])
                .collect(),
        );
        let embed = tape.constant(table);
        let eye = tape.constant(Tensor::from_vec(
            d,
            d,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ));
        let zero = tape.constant(Tensor::zeros(1, d));
        let h = encode_trainable(&mut tape, embed, eye, zero, &seq).unwrap();
        let hv = tape.value(h);
        assert_eq!(hv.shape(), (seq.len(), d));
        // Row for a single token equals its embedding under identity.
        assert_eq!(hv.row(1), &[4.0, 8.0, 12.0]); // "e1" has id 4
        // Row 0 is the mean over all real token rows.
        let mean: f64 = seq.token_positions().iter().map(|&p| hv.at(p, 0)).sum::<f64>()
            / seq.token_positions().len() as f64;
        assert!((hv.at(0, 0) - mean).abs() < 1e-12);
    }

    #[test]
    fn pad_node_vector_uses_claim_tokens_only() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &EvidenceSentence::pad(), &v, 130).unwrap();
        let d = 2;
        let mut tape = Tape::new();
        let table = Tensor::from_vec(
            v.len(),
            d,
            (0..v.len()).flat_map(|i| vec![i as f64, 0.0]).collect(),
        );
        let embed = tape.constant(table);
        let eye = tape.constant(Tensor::from_vec(d, d, vec![1.0, 0.0, 0.0, 1.0]));
        let zero = tape.constant(Tensor::zeros(1, d));
        let h = encode_trainable(&mut tape, embed, eye, zero, &seq).unwrap();
        let hv = tape.value(h);
        let claim_mean: f64 =
            seq.claim_positions().iter().map(|&p| hv.at(p, 0)).sum::<f64>() / 4.0;
        assert!((hv.at(0, 0) - claim_mean).abs() < 1e-12);
    }

    #[test]
    fn encoder_is_equivariant_under_vocab_relabeling() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "w1 w2"), &v, 130).unwrap();
        let d = 4;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let table = crate::params::uniform_init(&mut rng, v.len(), d, 0.5);
        let w = crate::params::xavier_init(&mut rng, d, d);
        let b = crate::params::uniform_init(&mut rng, 1, d, 0.1);

        // Random bijection over ids; permute table rows to match.
        let mut perm: Vec<usize> = (0..v.len()).collect();
        perm.shuffle(&mut rng);
        let mut permuted = Tensor::zeros(v.len(), d);
        for (old, &new) in perm.iter().enumerate() {
            permuted.row_mut(new).copy_from_slice(table.row(old));
        }
        let relabeled = NodeSequence {
            ids: seq.ids.iter().map(|&id| perm[id]).collect(),
            ..seq.clone()
        };

        let run = |table: Tensor, seq: &NodeSequence| {
            let mut tape = Tape::new();
            let e = tape.constant(table);
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let h = encode_trainable(&mut tape, e, wv, bv, seq).unwrap();
            tape.value(h).clone()
        };
        assert_eq!(run(table, &seq), run(permuted, &relabeled));
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "w1"), &v, 130).unwrap();
        let mut tape = Tape::new();
        let embed = tape.constant(Tensor::zeros(3, 2)); // too few rows
        let eye = tape.constant(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let zero = tape.constant(Tensor::zeros(1, 2));
        assert!(encode_trainable(&mut tape, embed, eye, zero, &seq).is_err());
    }

    #[test]
    fn external_states_round_trip_and_checks() {
        let v = vocab();
        let seq = NodeSequence::build(&claim(), &evidence("t1", "w1"), &v, 130).unwrap();
        let dim = 3;
        let mut map = HashMap::new();
        map.insert(
            ("c1".to_string(), 0),
            Tensor::from_vec(
                seq.len(),
                dim,
                (0..seq.len() * dim).map(|i| i as f64 * 0.125).collect(),
            ),
        );
        let states = ExternalStates::from_map(dim, map);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("states.txt");
        states.save(&path).unwrap();
        let loaded = ExternalStates::load(&path).unwrap();
        assert_eq!(loaded.dim(), dim);
        assert_eq!(
            loaded.get("c1", 0, &seq).unwrap(),
            states.get("c1", 0, &seq).unwrap()
        );

        // Missing node.
        assert!(loaded.get("c1", 1, &seq).is_err());
        // Shape mismatch.
        let short = NodeSequence::build(&claim(), &EvidenceSentence::pad(), &v, 130).unwrap();
        assert!(matches!(
            loaded.get("c1", 0, &short),
            Err(KgatError::ConfigMismatch(_))
        ));

        // Frozen: encoding puts a constant on the tape.
        let mut tape = Tape::new();
        let h = encode_external(&mut tape, &loaded, "c1", 0, &seq).unwrap();
        assert_eq!(tape.value(h).shape(), (seq.len(), dim));
    }
}
