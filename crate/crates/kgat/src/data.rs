//! Claim/evidence records, vocabulary, dataset loading and the synthetic
//! corpus generator.
//!
//! Datasets are line-delimited JSON. Each record carries a pre-tokenized
//! claim, its verdict label, a list of candidate evidence sentences with
//! retrieval scores, and zero or more golden evidence sets (each a
//! complete set of `(doc_id, sent_idx)` pairs). Text fields hold
//! space-separated tokens; no further tokenization happens downstream.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KgatError, Result};
use crate::fsio;

/// Number of evidence slots per claim after preparation.
pub const EVIDENCE_PER_CLAIM: usize = 5;

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const UNK_ID: usize = 3;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Verification verdict for a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Supports,
    Refutes,
    NotEnoughInfo,
}

impl Label {
    pub const COUNT: usize = 3;

    pub fn from_str(s: &str) -> Option<Label> {
        match s {
            "SUPPORTS" => Some(Label::Supports),
            "REFUTES" => Some(Label::Refutes),
            "NOT ENOUGH INFO" => Some(Label::NotEnoughInfo),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }

    /// Stable class index used by the label head (0, 1, 2).
    pub fn index(&self) -> usize {
        match self {
            Label::Supports => 0,
            Label::Refutes => 1,
            Label::NotEnoughInfo => 2,
        }
    }

    pub fn from_index(i: usize) -> Label {
        match i {
            0 => Label::Supports,
            1 => Label::Refutes,
            2 => Label::NotEnoughInfo,
            _ => panic!("label index out of range: {i}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One candidate evidence sentence attached to a claim.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSentence {
    pub doc_id: String,
    pub sent_idx: u32,
    pub title_tokens: Vec<String>,
    pub sentence_tokens: Vec<String>,
    /// Retrieval score used for candidate ordering; `-inf` when absent.
    pub retrieval_score: f64,
}

impl EvidenceSentence {
    /// The padding sentence used to fill claims with fewer candidates
    /// than evidence slots: a single `[PAD]` token at score `-inf`.
    pub fn pad() -> Self {
        EvidenceSentence {
            doc_id: String::new(),
            sent_idx: 0,
            title_tokens: Vec::new(),
            sentence_tokens: vec![PAD_TOKEN.to_string()],
            retrieval_score: f64::NEG_INFINITY,
        }
    }

    pub fn is_pad(&self) -> bool {
        self.doc_id.is_empty() && self.sentence_tokens == [PAD_TOKEN]
    }

    /// Identity used to match against golden sets.
    pub fn id(&self) -> (String, u32) {
        (self.doc_id.clone(), self.sent_idx)
    }
}

/// A claim, its verdict, candidate evidence and golden evidence sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimInstance {
    pub claim_id: String,
    pub claim_tokens: Vec<String>,
    pub label: Label,
    /// Exactly [`EVIDENCE_PER_CLAIM`] entries after preparation; padded
    /// with [`EvidenceSentence::pad`] when the record has fewer.
    pub candidates: Vec<EvidenceSentence>,
    /// Alternative complete golden sets; empty iff the label is
    /// NOT ENOUGH INFO.
    pub golden_sets: Vec<Vec<(String, u32)>>,
}

impl ClaimInstance {
    /// Union of all golden sentence ids.
    pub fn golden_union(&self) -> BTreeSet<(String, u32)> {
        self.golden_sets.iter().flatten().cloned().collect()
    }

    /// True when the candidate at `i` belongs to some golden set.
    pub fn is_golden(&self, sentence: &EvidenceSentence) -> bool {
        !sentence.is_pad()
            && self
                .golden_sets
                .iter()
                .flatten()
                .any(|(d, s)| *d == sentence.doc_id && *s == sentence.sent_idx)
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawCandidate {
    doc_id: String,
    sent_idx: u32,
    title: String,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    claim_id: String,
    claim: String,
    label: String,
    candidates: Vec<RawCandidate>,
    golden: Vec<Vec<(String, u32)>>,
}

fn tokens_of(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn record_to_instance(raw: RawRecord, path: &Path, line: usize) -> Result<ClaimInstance> {
    let parse_err = |message: String| KgatError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let label = Label::from_str(&raw.label)
        .ok_or_else(|| parse_err(format!("unknown label {:?}", raw.label)))?;
    let claim_tokens = tokens_of(&raw.claim);
    if claim_tokens.is_empty() {
        return Err(parse_err("empty claim".into()));
    }
    if raw.candidates.is_empty() {
        return Err(parse_err(format!(
            "claim {} has no candidates",
            raw.claim_id
        )));
    }
    match (label, raw.golden.iter().any(|s| !s.is_empty())) {
        (Label::NotEnoughInfo, true) => {
            return Err(parse_err(format!(
                "claim {} is NOT ENOUGH INFO but carries golden evidence",
                raw.claim_id
            )));
        }
        (Label::Supports | Label::Refutes, false) => {
            return Err(parse_err(format!(
                "verifiable claim {} has no golden evidence",
                raw.claim_id
            )));
        }
        _ => {}
    }
    let mut candidates = Vec::with_capacity(raw.candidates.len());
    for c in raw.candidates {
        let score = match c.score {
            Some(s) if !s.is_finite() => {
                return Err(parse_err(format!(
                    "candidate ({}, {}) has non-finite score",
                    c.doc_id, c.sent_idx
                )));
            }
            Some(s) => s,
            None => f64::NEG_INFINITY,
        };
        let sentence_tokens = tokens_of(&c.text);
        if sentence_tokens.is_empty() {
            return Err(parse_err(format!(
                "candidate ({}, {}) has an empty sentence",
                c.doc_id, c.sent_idx
            )));
        }
        candidates.push(EvidenceSentence {
            doc_id: c.doc_id,
            sent_idx: c.sent_idx,
            title_tokens: tokens_of(&c.title),
            sentence_tokens,
            retrieval_score: score,
        });
    }
    Ok(ClaimInstance {
        claim_id: raw.claim_id,
        claim_tokens,
        label,
        candidates,
        golden_sets: raw.golden,
    })
}

fn instance_to_record(inst: &ClaimInstance) -> RawRecord {
    RawRecord {
        claim_id: inst.claim_id.clone(),
        claim: inst.claim_tokens.join(" "),
        label: inst.label.as_str().to_string(),
        candidates: inst
            .candidates
            .iter()
            .filter(|c| !c.is_pad())
            .map(|c| RawCandidate {
                doc_id: c.doc_id.clone(),
                sent_idx: c.sent_idx,
                title: c.title_tokens.join(" "),
                text: c.sentence_tokens.join(" "),
                score: if c.retrieval_score.is_finite() {
                    Some(c.retrieval_score)
                } else {
                    None
                },
            })
            .collect(),
        golden: inst.golden_sets.clone(),
    }
}

/// Read raw records without truncation or padding. Candidate lists keep
/// their file order; use this for ranking, where all candidates matter.
pub fn read_records(path: &Path) -> Result<Vec<ClaimInstance>> {
    let text = fsio::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| KgatError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record_to_instance(raw, path, i + 1)?);
    }
    if out.is_empty() {
        return Err(KgatError::Data(format!(
            "dataset {} contains no records",
            path.display()
        )));
    }
    Ok(out)
}

/// Serialize records as line-delimited JSON.
pub fn records_to_jsonl(instances: &[ClaimInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&instance_to_record(inst)).expect("serialize"));
        out.push('\n');
    }
    out
}

/// Write records to `path` atomically.
pub fn save_records(path: &Path, instances: &[ClaimInstance]) -> Result<()> {
    fsio::atomic_write(path, records_to_jsonl(instances).as_bytes())
}

/// Sort candidates by descending retrieval score, breaking ties by
/// `(doc_id, sent_idx)`, then cut or pad the list to exactly `slots`.
///
/// With `force_golden`, golden sentences are kept ahead of everything
/// else regardless of score (used on training data so supervision never
/// falls off the end).
pub fn prepare_candidates(inst: &mut ClaimInstance, slots: usize, force_golden: bool) {
    let by_score = |a: &EvidenceSentence, b: &EvidenceSentence| {
        b.retrieval_score
            .partial_cmp(&a.retrieval_score)
            .expect("scores are never NaN")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| a.sent_idx.cmp(&b.sent_idx))
    };
    inst.candidates.sort_by(by_score);
    if force_golden {
        // Stable partition keeps the score order inside each group.
        let (golden, rest): (Vec<_>, Vec<_>) = inst
            .candidates
            .drain(..)
            .partition(|c| inst.golden_sets.iter().flatten().any(|g| g.0 == c.doc_id && g.1 == c.sent_idx));
        inst.candidates = golden;
        inst.candidates.extend(rest);
    }
    inst.candidates.truncate(slots);
    while inst.candidates.len() < slots {
        inst.candidates.push(EvidenceSentence::pad());
    }
}

/// Load a dataset and prepare every claim to [`EVIDENCE_PER_CLAIM`]
/// candidate slots.
pub fn load_dataset(path: &Path, slots: usize, force_golden: bool) -> Result<Vec<ClaimInstance>> {
    let mut instances = read_records(path)?;
    for inst in &mut instances {
        prepare_candidates(inst, slots, force_golden);
    }
    Ok(instances)
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token-to-id mapping with four reserved entries: `[CLS]`, `[SEP]`,
/// `[PAD]`, `[UNK]` at ids 0 through 3. Unknown tokens map to `[UNK]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary holding only the reserved tokens.
    pub fn reserved() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, UNK_TOKEN] {
            v.push(t);
        }
        v
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    /// Build from an explicit token order (reserved tokens are prepended
    /// if missing). Used when loading a serialized vocabulary.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut v = Vocabulary::reserved();
        for t in tokens {
            v.push(&t);
        }
        for (i, t) in [CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, UNK_TOKEN].iter().enumerate() {
            if v.tokens[i] != *t {
                return Err(KgatError::Data(format!(
                    "reserved token {t} is not at id {i}"
                )));
            }
        }
        Ok(v)
    }

    /// Collect every token appearing in the instances, in sorted order,
    /// after the reserved entries.
    pub fn build(instances: &[ClaimInstance]) -> Self {
        let mut seen = BTreeSet::new();
        for inst in instances {
            seen.extend(inst.claim_tokens.iter().cloned());
            for c in &inst.candidates {
                seen.extend(c.title_tokens.iter().cloned());
                seen.extend(c.sentence_tokens.iter().cloned());
            }
        }
        let mut v = Vocabulary::reserved();
        for t in seen {
            v.push(&t);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, id equal to line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        fsio::atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        Vocabulary::from_tokens(text.lines().map(str::to_string))
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator
// ---------------------------------------------------------------------------

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    /// Fraction of verifiable claims whose golden evidence is split over
    /// two sentences.
    pub multi_frac: f64,
    pub entities: usize,
    pub attributes: usize,
    /// Raw candidates emitted per claim (before any truncation).
    pub candidates_per_claim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            train: 2000,
            dev: 500,
            multi_frac: 0.3,
            entities: 120,
            attributes: 40,
            candidates_per_claim: 8,
        }
    }
}

/// A generated corpus: train split, dev split and the shared vocabulary.
#[derive(Debug)]
pub struct SynthCorpus {
    pub train: Vec<ClaimInstance>,
    pub dev: Vec<ClaimInstance>,
    pub vocab: Vocabulary,
}

const NEGATION: &str = "not";
const RELATIONS: [&str; 3] = ["is", "has", "was"];
const FILLERS: [&str; 8] = ["f0", "f1", "f2", "f3", "f4", "f5", "f6", "f7"];

/// Claims are entity/attribute statements; candidate evidence either
/// verifies them, refutes them with a negation token directly before the
/// attribute, or talks about something else entirely:
///
/// * SUPPORTS — golden evidence covers the entity and the attribute
///   (one sentence, or split over two for multi-evidence claims).
/// * REFUTES — as SUPPORTS, but the attribute is preceded by `not`.
/// * NOT ENOUGH INFO — no candidate mentions the attribute at all.
///
/// Distractors share the claim's entity or (for SUPPORTS claims) its
/// attribute without ever completing the pattern, and the negation token
/// appears only in REFUTES golden evidence, so the verdict is a pure
/// function of the candidate set.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.train == 0 || cfg.dev == 0 {
        return Err(KgatError::Data("empty split requested".into()));
    }
    if !(0.0..=1.0).contains(&cfg.multi_frac) {
        return Err(KgatError::Data(format!(
            "multi_frac must be in [0, 1], got {}",
            cfg.multi_frac
        )));
    }
    if cfg.entities < 2 || cfg.attributes < 2 {
        return Err(KgatError::Data(
            "need at least two entities and two attributes".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let train = generate_split(cfg, "train", cfg.train, &mut rng);
    let dev = generate_split(cfg, "dev", cfg.dev, &mut rng);
    let mut all = train.clone();
    all.extend(dev.iter().cloned());
    let vocab = Vocabulary::build(&all);
    Ok(SynthCorpus { train, dev, vocab })
}

fn generate_split(
    cfg: &SynthConfig,
    split: &str,
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<ClaimInstance> {
    // Stratified labels: as close to uniform thirds as n allows.
    let mut labels: Vec<Label> = (0..n)
        .map(|i| Label::from_index(i % Label::COUNT))
        .collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| generate_claim(cfg, &format!("{split}-{i:05}"), label, rng))
        .collect()
}

fn entity(i: usize) -> String {
    format!("e{i}")
}

fn attribute(i: usize) -> String {
    format!("a{i}")
}

fn fillers(rng: &mut ChaCha20Rng, max: usize) -> Vec<String> {
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|_| FILLERS[rng.random_range(0..FILLERS.len())].to_string())
        .collect()
}

fn relation(rng: &mut ChaCha20Rng) -> String {
    RELATIONS[rng.random_range(0..RELATIONS.len())].to_string()
}

struct ClaimBuilder {
    next_sent_idx: BTreeMap<String, u32>,
    candidates: Vec<EvidenceSentence>,
}

impl ClaimBuilder {
    fn new() -> Self {
        ClaimBuilder {
            next_sent_idx: BTreeMap::new(),
            candidates: Vec::new(),
        }
    }

    fn add(&mut self, doc: &str, body: Vec<String>, score: f64) -> (String, u32) {
        let idx = self.next_sent_idx.entry(doc.to_string()).or_insert(0);
        let sent_idx = *idx;
        *idx += 1;
        self.candidates.push(EvidenceSentence {
            doc_id: doc.to_string(),
            sent_idx,
            title_tokens: vec![doc.to_string()],
            sentence_tokens: body,
            retrieval_score: score,
        });
        (doc.to_string(), sent_idx)
    }
}

fn generate_claim(
    cfg: &SynthConfig,
    claim_id: &str,
    label: Label,
    rng: &mut ChaCha20Rng,
) -> ClaimInstance {
    let ent_i = rng.random_range(0..cfg.entities);
    let ent = entity(ent_i);
    let attr = attribute(rng.random_range(0..cfg.attributes));

    let mut claim_tokens = vec![ent.clone(), relation(rng), attr.clone()];
    claim_tokens.extend(fillers(rng, 1));

    let mut builder = ClaimBuilder::new();
    let golden_score = |rng: &mut ChaCha20Rng| rng.random_range(0.80..0.99);
    let distract_score = |rng: &mut ChaCha20Rng| rng.random_range(0.05..0.75);

    let mut golden_set: Vec<(String, u32)> = Vec::new();
    if label != Label::NotEnoughInfo {
        let multi = rng.random_bool(cfg.multi_frac);
        let negated = label == Label::Refutes;
        if multi {
            // Entity match in one sentence, attribute match in another;
            // both live on the entity's page so the title binds them.
            let mut first = vec![ent.clone(), relation(rng)];
            first.extend(fillers(rng, 2));
            if first.len() == 2 {
                first.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
            }
            let mut second = vec![FILLERS[rng.random_range(0..FILLERS.len())].to_string(), relation(rng)];
            if negated {
                second.push(NEGATION.to_string());
            }
            second.push(attr.clone());
            second.extend(fillers(rng, 1));
            let s1 = golden_score(rng);
            let s2 = golden_score(rng);
            golden_set.push(builder.add(&ent, first, s1));
            golden_set.push(builder.add(&ent, second, s2));
        } else {
            let mut body = vec![ent.clone(), relation(rng)];
            if negated {
                body.push(NEGATION.to_string());
            }
            body.push(attr.clone());
            body.extend(fillers(rng, 2));
            let s = golden_score(rng);
            golden_set.push(builder.add(&ent, body, s));
        }
    }

    while builder.candidates.len() < cfg.candidates_per_claim {
        let share_entity = rng.random_bool(0.5);
        // Attribute-sharing distractors are only safe for SUPPORTS
        // claims: anywhere else they would perturb the label rule.
        let share_attr = !share_entity && label == Label::Supports && rng.random_bool(0.4);
        let other_attr = loop {
            let a = attribute(rng.random_range(0..cfg.attributes));
            if a != attr {
                break a;
            }
        };
        let other_ent = loop {
            let e = entity(rng.random_range(0..cfg.entities));
            if e != ent {
                break e;
            }
        };
        let (doc, body) = if share_entity {
            let mut body = vec![ent.clone(), relation(rng), other_attr];
            body.extend(fillers(rng, 2));
            (ent.clone(), body)
        } else if share_attr {
            let mut body = vec![other_ent.clone(), relation(rng), attr.clone()];
            body.extend(fillers(rng, 2));
            (other_ent, body)
        } else {
            let mut body = vec![other_ent.clone(), relation(rng), other_attr];
            body.extend(fillers(rng, 2));
            (other_ent, body)
        };
        let s = distract_score(rng);
        builder.add(&doc, body, s);
    }

    let mut candidates = builder.candidates;
    candidates.shuffle(rng);

    ClaimInstance {
        claim_id: claim_id.to_string(),
        claim_tokens,
        label,
        candidates,
        golden_sets: if golden_set.is_empty() {
            Vec::new()
        } else {
            vec![golden_set]
        },
    }
}
