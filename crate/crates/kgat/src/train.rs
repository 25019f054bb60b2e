//! Training loop, evaluation, and the run configuration file.
//!
//! Training is fully deterministic for a given configuration and seed:
//! parameter initialization, epoch shuffles, micro-batch grouping, and
//! gradient accumulation all follow fixed seeded orders, so a rerun
//! reproduces the same checkpoint byte for byte.
//!
//! The loop processes micro-batches of claims (each sorted by claim id),
//! accumulates gradients over a fixed number of micro-batches, normalizes
//! by the number of claims in the window, and takes one optimizer step
//! per window under a linear warmup/decay schedule. After every epoch the
//! dev split is scored, and the parameters with the best dev label
//! accuracy are kept.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{ClaimInstance, EvidenceSentence, Vocabulary, EVIDENCE_PER_CLAIM};
use crate::error::{KgatError, Result};
use crate::fsio;
use crate::metrics::{self, Verdict};
use crate::model::{AblationMode, AttentionTrace, Model, ModelConfig, StateSource};
use crate::optim::{linear_warmup_decay, Adam};
use crate::params::ParamSet;
use crate::tape::Tape;

/// Flat `key = value` run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub kernels: usize,
    pub evidence: usize,
    pub max_len: usize,
    /// Claims per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulate_steps: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    /// Fraction of total optimizer steps spent ramping up.
    pub warmup: f64,
    pub epochs: usize,
    /// Stop once dev label accuracy reaches this value.
    pub early_stop_la: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            kernels: 21,
            evidence: EVIDENCE_PER_CLAIM,
            max_len: crate::encoder::DEFAULT_MAX_LEN,
            batch_size: 4,
            accumulate_steps: 8,
            learning_rate: 2e-2,
            warmup: 0.1,
            epochs: 50,
            early_stop_la: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            kernels: self.kernels,
            evidence_slots: self.evidence,
            max_len: self.max_len,
        }
    }

    /// Parse a configuration file. Unknown keys are rejected; missing
    /// keys keep their defaults. Lines starting with `#` are comments.
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = fsio::read_to_string(path)?;
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| KgatError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| err(format!("bad {what} value {value:?}"));
            match key {
                "dim" => cfg.dim = value.parse().map_err(|_| bad("dim"))?,
                "kernels" => cfg.kernels = value.parse().map_err(|_| bad("kernels"))?,
                "evidence" => cfg.evidence = value.parse().map_err(|_| bad("evidence"))?,
                "max_len" => cfg.max_len = value.parse().map_err(|_| bad("max_len"))?,
                "batch_size" => {
                    cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?
                }
                "accumulate_steps" => {
                    cfg.accumulate_steps =
                        value.parse().map_err(|_| bad("accumulate_steps"))?
                }
                "learning_rate" => {
                    cfg.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?
                }
                "warmup" => cfg.warmup = value.parse().map_err(|_| bad("warmup"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "early_stop_la" => {
                    cfg.early_stop_la =
                        Some(value.parse().map_err(|_| bad("early_stop_la"))?)
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.evidence == 0 || self.batch_size == 0 || self.accumulate_steps == 0
        {
            return Err(KgatError::Usage(
                "dim, evidence, batch_size and accumulate_steps must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(KgatError::Usage(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(KgatError::Usage(format!(
                "warmup must be in [0, 1), got {}",
                self.warmup
            )));
        }
        Ok(())
    }
}

/// One optimizer step as recorded in the history.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStat {
    pub step: u64,
    pub lr: f64,
    /// Mean claim loss over the accumulation window.
    pub loss: f64,
}

/// One epoch's dev scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_label_accuracy: f64,
    pub dev_strict_score: f64,
}

/// Full per-step and per-epoch record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub steps: Vec<StepStat>,
    pub epochs: Vec<EpochStat>,
}

impl History {
    /// Deterministic line-oriented rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&format!(
                "step={} lr={:.6e} loss={:.6}\n",
                s.step, s.lr, s.loss
            ));
        }
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch={} train_loss={:.6} dev_label_accuracy={:.6} dev_strict_score={:.6}\n",
                e.epoch, e.train_loss, e.dev_label_accuracy, e.dev_strict_score
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.render().as_bytes())
    }
}

/// A finished run: the best-dev parameters with the optimizer state that
/// produced them.
pub struct TrainResult {
    pub model: Model,
    pub adam: Adam,
    pub history: History,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    /// Parameters as of the last trained epoch. Checkpoints keep the
    /// best-dev parameters (in `model`); attention analyses on the
    /// converged state want these instead, since dev accuracy often
    /// peaks epochs before the attention distributions settle.
    pub final_params: ParamSet,
}

/// Which candidates evaluation feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMode {
    /// The prepared retrieval candidates, as stored.
    Retrieved,
    /// Golden sentences only, wherever any golden sentence is among the
    /// candidates; claims without golden candidates keep the originals.
    GoldenOnly,
}

/// Scores plus per-claim verdicts and attention traces.
pub struct Evaluation {
    pub verdicts: Vec<Verdict>,
    pub traces: Vec<AttentionTrace>,
    pub label_accuracy: f64,
    pub strict_score: f64,
}

/// Restrict a claim's candidates to its golden sentences (padded back to
/// the full slot count). Claims with no golden candidate are unchanged.
pub fn with_golden_candidates(inst: &ClaimInstance, slots: usize) -> ClaimInstance {
    let golden: Vec<EvidenceSentence> = inst
        .candidates
        .iter()
        .filter(|c| !c.is_pad() && inst.is_golden(c))
        .cloned()
        .collect();
    if golden.is_empty() {
        return inst.clone();
    }
    let mut out = inst.clone();
    out.candidates = golden;
    out.candidates
        .resize(slots, EvidenceSentence::pad());
    out
}

/// Score `instances` with the model, collecting verdicts and traces in
/// input order.
pub fn evaluate(
    model: &Model,
    instances: &[ClaimInstance],
    evidence: EvidenceMode,
) -> Result<Evaluation> {
    let mut verdicts = Vec::with_capacity(instances.len());
    let mut traces = Vec::with_capacity(instances.len());
    for inst in instances {
        let prepared;
        let inst = match evidence {
            EvidenceMode::Retrieved => inst,
            EvidenceMode::GoldenOnly => {
                prepared = with_golden_candidates(inst, model.config.evidence_slots);
                &prepared
            }
        };
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, inst, &StateSource::Trainable)?;
        verdicts.push(Verdict::new(inst, &fwd.trace));
        traces.push(fwd.trace);
    }
    let label_accuracy = metrics::label_accuracy(&verdicts)?;
    let strict_score = metrics::strict_score(&verdicts)?;
    Ok(Evaluation {
        verdicts,
        traces,
        label_accuracy,
        strict_score,
    })
}

/// Train a fresh model. The vocabulary comes from the training split
/// alone; dev tokens outside it fall back to `[UNK]`.
pub fn train(
    config: &TrainConfig,
    mode: AblationMode,
    seed: u64,
    train_set: &[ClaimInstance],
    dev_set: &[ClaimInstance],
) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(KgatError::Data("empty train or dev split".into()));
    }
    let vocab = Vocabulary::build(train_set);
    let mut model = Model::new(config.model_config(), vocab, mode, seed)?;
    let mut adam = Adam::new(&model.params);
    let mut history = History::default();

    let micro_per_epoch = train_set.len().div_ceil(config.batch_size);
    let windows_per_epoch = micro_per_epoch.div_ceil(config.accumulate_steps);
    let total_steps = (config.epochs * windows_per_epoch) as u64;

    let mut best_params = model.params.clone();
    let mut best_adam = adam.clone();
    let mut best_epoch = 0usize;
    let mut best_accuracy = if config.epochs == 0 {
        evaluate(&model, dev_set, EvidenceMode::Retrieved)?.label_accuracy
    } else {
        f64::NEG_INFINITY
    };

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut step = 0u64;
    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_count = 0usize;
        let micro_batches: Vec<Vec<usize>> = order
            .chunks(config.batch_size)
            .map(|chunk| {
                let mut batch = chunk.to_vec();
                batch.sort_by(|&a, &b| train_set[a].claim_id.cmp(&train_set[b].claim_id));
                batch
            })
            .collect();

        for window in micro_batches.chunks(config.accumulate_steps) {
            model.params.zero_grads();
            let mut window_loss = 0.0;
            let mut window_count = 0usize;
            for batch in window {
                for &i in batch {
                    let inst = &train_set[i];
                    let mut tape = Tape::new();
                    let fwd = model.forward(&mut tape, inst, &StateSource::Trainable)?;
                    let loss = tape.value(fwd.loss).at(0, 0);
                    if !loss.is_finite() {
                        return Err(KgatError::Numeric(format!(
                            "non-finite loss on claim {}",
                            inst.claim_id
                        )));
                    }
                    tape.backward(fwd.loss)?;
                    model.params.accumulate_from(&tape);
                    window_loss += loss;
                    window_count += 1;
                }
            }
            model.params.scale_grads(1.0 / window_count as f64);
            step += 1;
            let lr = linear_warmup_decay(step, total_steps, config.learning_rate, config.warmup);
            adam.step(&mut model.params, lr)?;
            history.steps.push(StepStat {
                step,
                lr,
                loss: window_loss / window_count as f64,
            });
            epoch_loss_sum += window_loss;
            epoch_count += window_count;
        }

        let eval = evaluate(&model, dev_set, EvidenceMode::Retrieved)?;
        history.epochs.push(EpochStat {
            epoch,
            train_loss: epoch_loss_sum / epoch_count as f64,
            dev_label_accuracy: eval.label_accuracy,
            dev_strict_score: eval.strict_score,
        });
        if eval.label_accuracy > best_accuracy {
            best_accuracy = eval.label_accuracy;
            best_params = model.params.clone();
            best_adam = adam.clone();
            best_epoch = epoch;
        }
        if let Some(threshold) = config.early_stop_la {
            if eval.label_accuracy >= threshold {
                break 'epochs;
            }
        }
    }

    let final_params = std::mem::replace(&mut model.params, best_params);
    Ok(TrainResult {
        model,
        adam: best_adam,
        history,
        best_epoch,
        best_accuracy,
        final_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};

    fn small_corpus(train: usize, dev: usize) -> (Vec<ClaimInstance>, Vec<ClaimInstance>) {
        let corpus = generate(&SynthConfig {
            train,
            dev,
            entities: 8,
            attributes: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut tr = corpus.train;
        let mut dv = corpus.dev;
        for inst in &mut tr {
            crate::data::prepare_candidates(inst, EVIDENCE_PER_CLAIM, true);
        }
        for inst in &mut dv {
            crate::data::prepare_candidates(inst, EVIDENCE_PER_CLAIM, false);
        }
        (tr, dv)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            kernels: 5,
            max_len: 40,
            batch_size: 4,
            accumulate_steps: 2,
            learning_rate: 5e-3,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(
            &path,
            "# run settings\ndim = 8\nkernels = 5\nlearning_rate = 0.01\nepochs = 2\nearly_stop_la = 0.9\n",
        )
        .unwrap();
        let cfg = TrainConfig::load(&path).unwrap();
        assert_eq!(cfg.dim, 8);
        assert_eq!(cfg.kernels, 5);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.early_stop_la, Some(0.9));
        // Missing keys keep defaults.
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);

        std::fs::write(&path, "mystery = 4\n").unwrap();
        assert!(matches!(
            TrainConfig::load(&path),
            Err(KgatError::Parse { line: 1, .. })
        ));
        std::fs::write(&path, "dim ten\n").unwrap();
        assert!(TrainConfig::load(&path).is_err());
        std::fs::write(&path, "warmup = 1.5\n").unwrap();
        assert!(TrainConfig::load(&path).is_err());
    }

    #[test]
    fn an_untrained_model_scores_near_chance() {
        let (tr, dv) = small_corpus(30, 30);
        let vocab = Vocabulary::build(&tr);
        let model = Model::new(
            tiny_config().model_config(),
            vocab,
            AblationMode::Full,
            5,
        )
        .unwrap();
        let eval = evaluate(&model, &dv, EvidenceMode::Retrieved).unwrap();
        assert!(
            (0.1..=0.6).contains(&eval.label_accuracy),
            "accuracy {} should be near one third",
            eval.label_accuracy
        );
    }

    #[test]
    fn training_reduces_the_loss_and_is_reproducible() {
        let (tr, dv) = small_corpus(48, 12);
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 2e-2,
            ..tiny_config()
        };
        let run = || train(&cfg, AblationMode::Full, 7, &tr, &dv).unwrap();
        let a = run();
        assert!(!a.history.steps.is_empty());
        assert_eq!(a.history.epochs.len(), 4);
        assert!(a.history.steps.iter().all(|s| s.loss.is_finite()));
        let first = a.history.epochs.first().unwrap().train_loss;
        let last = a.history.epochs.last().unwrap().train_loss;
        assert!(
            last < first,
            "mean loss should fall across epochs ({first} -> {last})"
        );

        let b = run();
        assert_eq!(a.history, b.history);
        for i in 0..a.model.params.len() {
            assert_eq!(
                a.model.params.get(i).value.data(),
                b.model.params.get(i).value.data()
            );
        }
    }

    #[test]
    fn golden_only_evaluation_swaps_the_candidates() {
        let (tr, _) = small_corpus(40, 10);
        for inst in &tr {
            let swapped = with_golden_candidates(inst, EVIDENCE_PER_CLAIM);
            assert_eq!(swapped.candidates.len(), EVIDENCE_PER_CLAIM);
            let golden: Vec<_> = swapped
                .candidates
                .iter()
                .filter(|c| !c.is_pad())
                .collect();
            if inst.golden_sets.is_empty() {
                // Unverifiable claims keep their retrieved candidates.
                assert_eq!(&swapped.candidates, &inst.candidates);
            } else {
                assert!(!golden.is_empty());
                assert!(golden.iter().all(|c| inst.is_golden(c)));
            }
        }
    }

    #[test]
    fn early_stopping_cuts_the_run_short() {
        let (tr, dv) = small_corpus(24, 8);
        let cfg = TrainConfig {
            epochs: 4,
            early_stop_la: Some(0.0),
            ..tiny_config()
        };
        let result = train(&cfg, AblationMode::Full, 3, &tr, &dv).unwrap();
        assert_eq!(result.history.epochs.len(), 1);
    }

    #[test]
    fn corrupted_parameters_abort_the_run() {
        let (tr, dv) = small_corpus(12, 8);
        // Train one window to get a model, poison it, then continue by
        // hand through the public evaluate/forward path.
        let result = train(&tiny_config(), AblationMode::Full, 3, &tr, &dv).unwrap();
        let mut model = result.model;
        let idx = model.params.index_of("edge.label.w").unwrap();
        model.params.get_mut(idx).value.data_mut()[0] = f64::NAN;
        let mut adam = Adam::new(&model.params);
        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, &tr[0], &StateSource::Trainable)
            .unwrap();
        tape.backward(fwd.loss).unwrap();
        model.params.zero_grads();
        model.params.accumulate_from(&tape);
        let err = adam.step(&mut model.params, 1e-3);
        assert!(matches!(err, Err(KgatError::Numeric(_))));
    }

    #[test]
    fn zero_epochs_returns_the_initial_model() {
        let (tr, dv) = small_corpus(12, 8);
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let result = train(&cfg, AblationMode::Full, 3, &tr, &dv).unwrap();
        assert!(result.history.steps.is_empty());
        assert_eq!(result.best_epoch, 0);
        assert!(result.best_accuracy.is_finite());
        let fresh = Model::new(
            cfg.model_config(),
            Vocabulary::build(&tr),
            AblationMode::Full,
            3,
        )
        .unwrap();
        for i in 0..fresh.params.len() {
            assert_eq!(
                fresh.params.get(i).value.data(),
                result.model.params.get(i).value.data()
            );
        }
    }
}
