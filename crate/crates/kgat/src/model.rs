//! The claim-verification model: an evidence graph with kernel-based
//! attention for both edge propagation and node selection.
//!
//! A claim and its candidate evidence sentences form a fully connected
//! graph (self-edges included) over the non-padding candidates. Each node
//! encodes one claim/evidence pair into per-token states `H` whose row 0
//! is the node vector `z`. Information then flows in two stages:
//!
//! 1. **Edge propagation.** For every ordered pair `q -> p`, token
//!    attention over the source's real tokens builds a neighbour summary
//!    `zhat`. In kernel mode the attention logits come from Gaussian
//!    kernel pooling of the token-translation (cosine) matrix between the
//!    two nodes; in dot mode from scaled dot products with the target's
//!    node vector. A learned two-layer scorer turns `(z_p, zhat)` pairs
//!    into per-source weights `beta`, and the weighted neighbour summary
//!    concatenated with `z_p` feeds a three-way label head.
//! 2. **Node selection.** Each node gets a readout score — kernel pooling
//!    of the claim-vs-evidence translation matrix inside the node, or a
//!    scaled dot between the claim mean and the node vector — and a
//!    softmax turns the scores into selection weights.
//!
//! The final label distribution is the selection-weighted mixture of the
//! per-node distributions, and the loss is the negative log of the gold
//! label's joint probability.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{ClaimInstance, Label, Vocabulary, EVIDENCE_PER_CLAIM};
use crate::encoder::{encode_external, encode_trainable, ExternalStates, NodeSequence};
use crate::error::{KgatError, Result};
use crate::kernels::KernelBank;
use crate::params::{uniform_init, xavier_init, ParamSet};
use crate::tape::{Tape, Var};

/// Probability floor inside the training loss so a vanishing gold-label
/// probability cannot produce an infinite loss.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Which attention stages use kernel pooling; the alternatives fall back
/// to scaled dot-product attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Kernels in both edge propagation and node selection.
    Full,
    /// Kernels in node selection only; dot-product edge attention.
    NodeKernels,
    /// Kernels in edge propagation only; dot-product node selection.
    EdgeKernels,
    /// Dot-product attention everywhere.
    DotBaseline,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NodeKernels,
        AblationMode::EdgeKernels,
        AblationMode::DotBaseline,
    ];

    pub fn edge_uses_kernels(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::EdgeKernels)
    }

    pub fn selection_uses_kernels(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NodeKernels)
    }
}

impl FromStr for AblationMode {
    type Err = KgatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "node" => Ok(AblationMode::NodeKernels),
            "edge" => Ok(AblationMode::EdgeKernels),
            "gat" => Ok(AblationMode::DotBaseline),
            other => Err(KgatError::Usage(format!(
                "unknown mode {other:?}; expected full, node, edge, or gat"
            ))),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Full => "full",
            AblationMode::NodeKernels => "node",
            AblationMode::EdgeKernels => "edge",
            AblationMode::DotBaseline => "gat",
        })
    }
}

/// Structural hyperparameters; everything needed to rebuild a model
/// shell before loading its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Token-state width.
    pub dim: usize,
    /// Kernel count (one exact-match kernel plus soft bins).
    pub kernels: usize,
    /// Evidence slots per claim; graphs always carry this many nodes.
    pub evidence_slots: usize,
    /// Maximum sequence length per node.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            kernels: 21,
            evidence_slots: EVIDENCE_PER_CLAIM,
            max_len: crate::encoder::DEFAULT_MAX_LEN,
        }
    }
}

/// Sequences and validity mask for one claim's evidence graph.
#[derive(Debug, Clone)]
pub struct EvidenceGraph {
    pub sequences: Vec<NodeSequence>,
    /// Candidate indices of the non-padding nodes, ascending.
    pub valid: Vec<usize>,
}

/// Token-attention weights on one directed edge, in source-sequence
/// position order; padding positions never appear.
#[derive(Debug, Clone)]
pub struct EdgeTrace {
    /// Candidate index of the source node `q`.
    pub source: usize,
    /// Candidate index of the target node `p`.
    pub target: usize,
    /// `(position in source sequence, attention weight)` pairs.
    pub token_weights: Vec<(usize, f64)>,
}

/// Everything attention decided about one valid node.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub candidate: usize,
    /// Readout weight of this node in the evidence-selection softmax.
    pub selection: f64,
    /// `(source candidate index, edge weight)` over all valid sources.
    pub source_weights: Vec<(usize, f64)>,
    /// Per-node label distribution, label-index order.
    pub label_dist: [f64; 3],
}

/// Full record of one forward pass, for analysis and metrics.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// One entry per valid node, ascending candidate index.
    pub nodes: Vec<NodeTrace>,
    /// All ordered pairs of valid nodes, grouped by target.
    pub edges: Vec<EdgeTrace>,
    /// Joint label distribution, label-index order.
    pub joint: [f64; 3],
}

impl AttentionTrace {
    /// Argmax label of the joint distribution; ties resolve to the
    /// lowest label index.
    pub fn predicted(&self) -> Label {
        let mut best = 0;
        for i in 1..self.joint.len() {
            if self.joint[i] > self.joint[best] {
                best = i;
            }
        }
        Label::from_index(best)
    }

    /// Candidate indices ranked by selection weight, descending; ties
    /// resolve to the lower candidate index.
    pub fn ranked_candidates(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            self.nodes[b]
                .selection
                .partial_cmp(&self.nodes[a].selection)
                .unwrap()
                .then(self.nodes[a].candidate.cmp(&self.nodes[b].candidate))
        });
        order.into_iter().map(|i| self.nodes[i].candidate).collect()
    }
}

/// Live tape variables of one forward pass.
pub struct ForwardPass {
    /// Negative log joint probability of the gold label.
    pub loss: Var,
    /// Joint label distribution, shape `1 x 3`.
    pub joint: Var,
    pub trace: AttentionTrace,
}

/// Where token states come from.
pub enum StateSource<'a> {
    /// The built-in trainable encoder (embedding + per-token affine map).
    Trainable,
    /// Frozen precomputed state matrices; encoder parameters receive no
    /// gradient. Row 0 of each stored matrix must hold the node vector.
    Frozen(&'a ExternalStates),
}

struct Bound {
    embed: Var,
    proj_w: Var,
    proj_b: Var,
    attn_w: Var,
    attn_b: Var,
    mlp_w1: Var,
    mlp_b1: Var,
    mlp_w2: Var,
    mlp_b2: Var,
    label_w: Var,
    label_b: Var,
    select_w: Var,
    select_b: Var,
}

/// The model: configuration, vocabulary, kernel bank, and named
/// parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub bank: KernelBank,
    pub mode: AblationMode,
    pub params: ParamSet,
}

impl Model {
    /// Fresh model with seeded initialization.
    ///
    /// The encoder (embeddings, projection) starts random; every score
    /// head — token attention, sentence-attention output, label layer
    /// and node selection — starts at zero. Zeroed heads make the
    /// initial prediction exactly uniform, so the first updates are
    /// driven by data statistics instead of initialization noise;
    /// empirically this removes a strong seed-lottery effect on
    /// whether training escapes a label-memorization plateau.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        mode: AblationMode,
        seed: u64,
    ) -> Result<Model> {
        if config.dim == 0 {
            return Err(KgatError::Usage("dim must be positive".into()));
        }
        if config.evidence_slots == 0 {
            return Err(KgatError::Usage("evidence_slots must be positive".into()));
        }
        let bank = KernelBank::default_bank(config.kernels)?;
        let d = config.dim;
        let k = config.kernels;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add("enc.embed", uniform_init(&mut rng, vocab.len(), d, 0.5));
        params.add("enc.proj.w", xavier_init(&mut rng, d, d));
        params.add("enc.proj.b", crate::tensor::Tensor::zeros(1, d));
        params.add("edge.token_attn.w", crate::tensor::Tensor::zeros(1, k));
        params.add("edge.token_attn.b", crate::tensor::Tensor::zeros(1, 1));
        params.add("edge.sent_mlp.w1", xavier_init(&mut rng, d, 2 * d));
        params.add("edge.sent_mlp.b1", crate::tensor::Tensor::zeros(1, d));
        params.add("edge.sent_mlp.w2", crate::tensor::Tensor::zeros(1, d));
        params.add("edge.sent_mlp.b2", crate::tensor::Tensor::zeros(1, 1));
        params.add("edge.label.w", crate::tensor::Tensor::zeros(3, 2 * d));
        params.add("edge.label.b", crate::tensor::Tensor::zeros(1, 3));
        params.add("node.select.w", crate::tensor::Tensor::zeros(1, k));
        params.add("node.select.b", crate::tensor::Tensor::zeros(1, 1));
        Ok(Model {
            config,
            vocab,
            bank,
            mode,
            params,
        })
    }

    /// Assemble a model from previously saved pieces.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        bank: KernelBank,
        mode: AblationMode,
        params: ParamSet,
    ) -> Model {
        Model {
            config,
            vocab,
            bank,
            mode,
            params,
        }
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self.params.bind(tape);
        let at = |name: &str| vars[self.params.index_of(name).expect(name)];
        Bound {
            embed: at("enc.embed"),
            proj_w: at("enc.proj.w"),
            proj_b: at("enc.proj.b"),
            attn_w: at("edge.token_attn.w"),
            attn_b: at("edge.token_attn.b"),
            mlp_w1: at("edge.sent_mlp.w1"),
            mlp_b1: at("edge.sent_mlp.b1"),
            mlp_w2: at("edge.sent_mlp.w2"),
            mlp_b2: at("edge.sent_mlp.b2"),
            label_w: at("edge.label.w"),
            label_b: at("edge.label.b"),
            select_w: at("node.select.w"),
            select_b: at("node.select.b"),
        }
    }

    /// Build the evidence graph for a prepared claim (sequences plus the
    /// set of non-padding nodes).
    pub fn graph(&self, instance: &ClaimInstance) -> Result<EvidenceGraph> {
        if instance.candidates.len() != self.config.evidence_slots {
            return Err(KgatError::ConfigMismatch(format!(
                "claim {} has {} candidates, model expects {}",
                instance.claim_id,
                instance.candidates.len(),
                self.config.evidence_slots
            )));
        }
        let sequences = NodeSequence::build_all(instance, &self.vocab, self.config.max_len)?;
        let valid: Vec<usize> = sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.pad_evidence)
            .map(|(i, _)| i)
            .collect();
        if valid.is_empty() {
            return Err(KgatError::Data(format!(
                "claim {} has no valid evidence nodes",
                instance.claim_id
            )));
        }
        Ok(EvidenceGraph { sequences, valid })
    }

    /// Run the full forward pass on `tape` and record the attention
    /// trace. The returned loss variable is ready for `Tape::backward`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        instance: &ClaimInstance,
        source: &StateSource,
    ) -> Result<ForwardPass> {
        if let StateSource::Frozen(states) = source {
            if states.dim() != self.config.dim {
                return Err(KgatError::ConfigMismatch(format!(
                    "external states are {}-dimensional, model expects {}",
                    states.dim(),
                    self.config.dim
                )));
            }
        }
        let graph = self.graph(instance)?;
        let bound = self.bind(tape);
        let scale = 1.0 / (self.config.dim as f64).sqrt();

        // Per-node token states H (row 0 = node vector z).
        let mut states = Vec::with_capacity(graph.valid.len());
        let mut zs = Vec::with_capacity(graph.valid.len());
        for &p in &graph.valid {
            let seq = &graph.sequences[p];
            let h = match source {
                StateSource::Trainable => {
                    encode_trainable(tape, bound.embed, bound.proj_w, bound.proj_b, seq)?
                }
                StateSource::Frozen(ext) => {
                    encode_external(tape, ext, &instance.claim_id, p, seq)?
                }
            };
            states.push(h);
            zs.push(tape.slice_rows(h, 0, 1));
        }

        // Edge propagation: token attention builds one neighbour summary
        // per ordered pair of valid nodes, grouped by target.
        let n = graph.valid.len();
        let mut summaries = vec![Vec::with_capacity(n); n]; // [target][source]
        let mut edges = Vec::with_capacity(n * n);
        for (pi, &p) in graph.valid.iter().enumerate() {
            for (qi, &q) in graph.valid.iter().enumerate() {
                let support = graph.sequences[q].token_positions();
                let scores = if self.mode.edge_uses_kernels() {
                    let m = tape.cosine(states[qi], states[pi]);
                    let cols = graph.sequences[p].context_positions();
                    let pooled = tape.kernel_pool(m, &support, &cols, &self.bank)?;
                    tape.affine(pooled, bound.attn_w, bound.attn_b)
                } else {
                    tape.row_dots(states[qi], zs[pi], scale)
                };
                let alpha = tape.masked_softmax(scores, &support)?;
                let zhat = tape.weighted_sum_rows(states[qi], alpha);
                summaries[pi].push(zhat);

                let weights = tape.value(alpha);
                edges.push(EdgeTrace {
                    source: q,
                    target: p,
                    token_weights: support
                        .iter()
                        .map(|&pos| (pos, weights.at(pos, 0)))
                        .collect(),
                });
            }
        }

        // Per-target edge weighting and label heads.
        let all: Vec<usize> = (0..n).collect();
        let labels: Vec<usize> = (0..3).collect();
        let mut dists = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        for pi in 0..n {
            let mut scores = Vec::with_capacity(n);
            for qi in 0..n {
                let pair = tape.concat_cols(zs[pi], summaries[pi][qi]);
                let hidden = tape.affine(pair, bound.mlp_w1, bound.mlp_b1);
                let hidden = tape.relu(hidden);
                scores.push(tape.affine(hidden, bound.mlp_w2, bound.mlp_b2));
            }
            let stacked = tape.stack_scalars(&scores);
            let beta = tape.masked_softmax(stacked, &all)?;
            let zmat = tape.vstack(&summaries[pi]);
            let readout = tape.weighted_sum_rows(zmat, beta);
            let v = tape.concat_cols(readout, zs[pi]);
            let logits = tape.affine(v, bound.label_w, bound.label_b);
            let dist = tape.masked_softmax(logits, &labels)?;
            dists.push(dist);
            betas.push(tape.value(beta).data().to_vec());
        }

        // Node selection scores and the joint readout.
        let mut scores = Vec::with_capacity(n);
        for (pi, &p) in graph.valid.iter().enumerate() {
            let seq = &graph.sequences[p];
            let claim_rows = seq.claim_positions();
            let s = if self.mode.selection_uses_kernels() {
                let m = tape.cosine(states[pi], states[pi]);
                let pooled =
                    tape.kernel_pool(m, &claim_rows, &seq.evidence_positions(), &self.bank)?;
                let phi = tape.mean_rows(pooled, &claim_rows);
                tape.affine(phi, bound.select_w, bound.select_b)
            } else {
                let cmean = tape.mean_rows(states[pi], &claim_rows);
                tape.row_dots(cmean, zs[pi], scale)
            };
            scores.push(s);
        }
        let stacked = tape.stack_scalars(&scores);
        let selection = tape.masked_softmax(stacked, &all)?;
        let distmat = tape.vstack(&dists);
        let joint = tape.weighted_sum_rows(distmat, selection);
        let loss = tape.pick_neg_log(joint, instance.label.index(), LOSS_FLOOR);

        let sel = tape.value(selection).data().to_vec();
        let jv = tape.value(joint).data().to_vec();
        let nodes = graph
            .valid
            .iter()
            .enumerate()
            .map(|(pi, &p)| {
                let dv = tape.value(dists[pi]).data().to_vec();
                NodeTrace {
                    candidate: p,
                    selection: sel[pi],
                    source_weights: graph
                        .valid
                        .iter()
                        .enumerate()
                        .map(|(qi, &q)| (q, betas[pi][qi]))
                        .collect(),
                    label_dist: [dv[0], dv[1], dv[2]],
                }
            })
            .collect();

        Ok(ForwardPass {
            loss,
            joint,
            trace: AttentionTrace {
                nodes,
                edges,
                joint: [jv[0], jv[1], jv[2]],
            },
        })
    }
}
