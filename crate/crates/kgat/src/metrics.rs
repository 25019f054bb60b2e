//! Evaluation metrics and attention diagnostics.
//!
//! Label accuracy scores the claim label alone. The strict verification
//! score additionally requires, for verifiable claims, that some
//! complete golden evidence group appears among the retained candidates.
//! Evidence precision/recall/F1 treats the retained candidates as the
//! retrieved set, micro-averaged over verifiable claims. Selection
//! recall ranks candidates by the model's selection weights and asks how
//! much golden evidence the top-k covers.

use std::collections::BTreeSet;

use crate::data::{ClaimInstance, Label, Vocabulary};
use crate::error::{KgatError, Result};
use crate::model::{AttentionTrace, EvidenceGraph};

/// Everything the metrics need to know about one scored claim.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub claim_id: String,
    pub gold: Label,
    pub predicted: Label,
    /// Non-padding candidate sentence ids, in slot order.
    pub retrieved: Vec<(String, u32)>,
    /// Golden evidence groups; any one group fully retrieved satisfies
    /// the strict score.
    pub golden_sets: Vec<Vec<(String, u32)>>,
    /// Candidate ids ranked by selection weight, descending.
    pub ranked: Vec<(String, u32)>,
    /// Largest selection weight on any node.
    pub max_selection: f64,
}

impl Verdict {
    pub fn new(instance: &ClaimInstance, trace: &AttentionTrace) -> Verdict {
        let retrieved = instance
            .candidates
            .iter()
            .filter(|c| !c.is_pad())
            .map(|c| c.id())
            .collect();
        let ranked = trace
            .ranked_candidates()
            .into_iter()
            .map(|i| instance.candidates[i].id())
            .collect();
        let max_selection = trace
            .nodes
            .iter()
            .map(|n| n.selection)
            .fold(0.0_f64, f64::max);
        Verdict {
            claim_id: instance.claim_id.clone(),
            gold: instance.label,
            predicted: trace.predicted(),
            retrieved,
            golden_sets: instance.golden_sets.clone(),
            ranked,
            max_selection,
        }
    }

    /// Union of all golden sentence ids across the alternative sets.
    pub fn golden_union(&self) -> BTreeSet<(String, u32)> {
        self.golden_sets.iter().flatten().cloned().collect()
    }

    fn evidence_satisfied(&self) -> bool {
        self.gold == Label::NotEnoughInfo
            || self
                .golden_sets
                .iter()
                .any(|set| set.iter().all(|g| self.retrieved.contains(g)))
    }
}

fn non_empty<'a>(verdicts: &'a [Verdict], what: &str) -> Result<&'a [Verdict]> {
    if verdicts.is_empty() {
        Err(KgatError::Data(format!("{what} over zero claims")))
    } else {
        Ok(verdicts)
    }
}

/// Fraction of claims whose predicted label matches the gold label.
pub fn label_accuracy(verdicts: &[Verdict]) -> Result<f64> {
    let v = non_empty(verdicts, "label accuracy")?;
    let hits = v.iter().filter(|x| x.gold == x.predicted).count();
    Ok(hits as f64 / v.len() as f64)
}

/// Strict score: the label must be right, and for verifiable claims some
/// golden group must be fully retrieved.
pub fn strict_score(verdicts: &[Verdict]) -> Result<f64> {
    let v = non_empty(verdicts, "strict score")?;
    let hits = v
        .iter()
        .filter(|x| x.gold == x.predicted && x.evidence_satisfied())
        .count();
    Ok(hits as f64 / v.len() as f64)
}

/// Micro-averaged evidence precision/recall/F1 over verifiable claims.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn evidence_prf(verdicts: &[Verdict]) -> Result<PrecisionRecall> {
    non_empty(verdicts, "evidence scoring")?;
    let mut tp = 0usize;
    let mut retrieved = 0usize;
    let mut golden = 0usize;
    let mut verifiable = 0usize;
    for v in verdicts {
        if v.gold == Label::NotEnoughInfo {
            continue;
        }
        verifiable += 1;
        let gold = v.golden_union();
        tp += v.retrieved.iter().filter(|id| gold.contains(id)).count();
        retrieved += v.retrieved.len();
        golden += gold.len();
    }
    if verifiable == 0 {
        return Err(KgatError::Data(
            "evidence scoring needs at least one verifiable claim".into(),
        ));
    }
    let precision = if retrieved == 0 {
        0.0
    } else {
        tp as f64 / retrieved as f64
    };
    let recall = if golden == 0 {
        0.0
    } else {
        tp as f64 / golden as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

/// Coverage of golden evidence by the top-k selected candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRecall {
    /// Total covered golden sentences over total golden sentences.
    pub micro: f64,
    /// Mean of per-claim coverage ratios.
    pub macro_avg: f64,
    pub claims: usize,
}

pub fn selection_recall_at_k(verdicts: &[Verdict], k: usize) -> Result<SelectionRecall> {
    non_empty(verdicts, "selection recall")?;
    let mut covered_total = 0usize;
    let mut golden_total = 0usize;
    let mut ratio_sum = 0.0;
    let mut claims = 0usize;
    for v in verdicts {
        let gold = v.golden_union();
        if v.gold == Label::NotEnoughInfo || gold.is_empty() {
            continue;
        }
        let covered = v
            .ranked
            .iter()
            .take(k)
            .filter(|id| gold.contains(id))
            .count();
        covered_total += covered;
        golden_total += gold.len();
        ratio_sum += covered as f64 / gold.len() as f64;
        claims += 1;
    }
    if claims == 0 {
        return Err(KgatError::Data(
            "selection recall needs at least one claim with golden evidence".into(),
        ));
    }
    Ok(SelectionRecall {
        micro: covered_total as f64 / golden_total as f64,
        macro_avg: ratio_sum / claims as f64,
        claims,
    })
}

/// Histogram of per-claim maximum selection weights over ten equal bins
/// on `[0, 1]`; the last bin is closed so a weight of exactly 1 counts.
pub fn max_selection_histogram(verdicts: &[Verdict]) -> [usize; 10] {
    let mut bins = [0usize; 10];
    for v in verdicts {
        let w = v.max_selection.clamp(0.0, 1.0);
        let bin = ((w * 10.0).floor() as usize).min(9);
        bins[bin] += 1;
    }
    bins
}

/// Shannon entropy of a probability vector (natural log, `0 ln 0 = 0`).
/// The vector must sum to one within `1e-6`.
pub fn attention_entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(KgatError::Numeric(format!(
            "entropy of an unnormalized vector (sum {sum})"
        )));
    }
    if let Some(bad) = p.iter().find(|&&x| !(0.0..=1.0 + 1e-9).contains(&x)) {
        return Err(KgatError::Numeric(format!(
            "entropy of a vector with entry {bad} outside [0, 1]"
        )));
    }
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum())
}

/// Mean observed entropy next to the entropy of a uniform distribution
/// over the same support sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyStat {
    pub mean: f64,
    pub uniform: f64,
}

/// Attention sharpness summary over a set of forward traces.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub claims: usize,
    /// Node-selection distributions.
    pub selection: EntropyStat,
    /// Per-target edge weights.
    pub edge: EntropyStat,
    /// Per-edge token attention.
    pub token: EntropyStat,
}

impl EntropyReport {
    pub fn render(&self) -> String {
        format!(
            "claims={}\nselection_entropy={:.6}\nselection_uniform={:.6}\n\
             edge_entropy={:.6}\nedge_uniform={:.6}\n\
             token_entropy={:.6}\ntoken_uniform={:.6}\n",
            self.claims,
            self.selection.mean,
            self.selection.uniform,
            self.edge.mean,
            self.edge.uniform,
            self.token.mean,
            self.token.uniform,
        )
    }
}

pub fn entropy_report(traces: &[AttentionTrace]) -> Result<EntropyReport> {
    if traces.is_empty() {
        return Err(KgatError::Data("entropy report over zero claims".into()));
    }
    let mut sel = Vec::new();
    let mut sel_uniform = Vec::new();
    let mut edge = Vec::new();
    let mut edge_uniform = Vec::new();
    let mut token = Vec::new();
    let mut token_uniform = Vec::new();
    for t in traces {
        let weights: Vec<f64> = t.nodes.iter().map(|n| n.selection).collect();
        sel.push(attention_entropy(&weights)?);
        sel_uniform.push((weights.len() as f64).ln());
        for node in &t.nodes {
            let b: Vec<f64> = node.source_weights.iter().map(|&(_, w)| w).collect();
            edge.push(attention_entropy(&b)?);
            edge_uniform.push((b.len() as f64).ln());
        }
        for e in &t.edges {
            let a: Vec<f64> = e.token_weights.iter().map(|&(_, w)| w).collect();
            token.push(attention_entropy(&a)?);
            token_uniform.push((a.len() as f64).ln());
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(EntropyReport {
        claims: traces.len(),
        selection: EntropyStat {
            mean: mean(&sel),
            uniform: mean(&sel_uniform),
        },
        edge: EntropyStat {
            mean: mean(&edge),
            uniform: mean(&edge_uniform),
        },
        token: EntropyStat {
            mean: mean(&token),
            uniform: mean(&token_uniform),
        },
    })
}

fn label_key(label: Label) -> &'static str {
    match label {
        Label::Supports => "supports",
        Label::Refutes => "refutes",
        Label::NotEnoughInfo => "nei",
    }
}

/// Human-readable dump of one claim's attention: per-node selection
/// weights and label distributions, per-target edge weights, and token
/// attention in sequence order. Padding positions never appear.
pub fn export_case_attention(
    instance: &ClaimInstance,
    graph: &EvidenceGraph,
    vocab: &Vocabulary,
    trace: &AttentionTrace,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "claim {} gold={} predicted={}\n",
        instance.claim_id,
        label_key(instance.label),
        label_key(trace.predicted())
    ));
    out.push_str(&format!(
        "joint supports={:.6} refutes={:.6} nei={:.6}\n",
        trace.joint[0], trace.joint[1], trace.joint[2]
    ));
    for node in &trace.nodes {
        let c = &instance.candidates[node.candidate];
        out.push_str(&format!(
            "node candidate={} doc={} sent={} selection={:.6}\n",
            node.candidate, c.doc_id, c.sent_idx, node.selection
        ));
        out.push_str(&format!(
            "  dist supports={:.6} refutes={:.6} nei={:.6}\n",
            node.label_dist[0], node.label_dist[1], node.label_dist[2]
        ));
        for &(source, w) in &node.source_weights {
            out.push_str(&format!("  edge source={source} weight={w:.6}\n"));
        }
    }
    for e in &trace.edges {
        let seq = &graph.sequences[e.source];
        let pairs: Vec<String> = e
            .token_weights
            .iter()
            .map(|&(pos, w)| format!("{}:{:.6}", vocab.token(seq.ids[pos]), w))
            .collect();
        out.push_str(&format!(
            "tokens source={} target={} {}\n",
            e.source,
            e.target,
            pairs.join(" ")
        ));
    }
    out
}
