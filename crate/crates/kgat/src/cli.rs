//! Command-line interface.
//!
//! Subcommands cover the whole workflow: synthesize a corpus
//! (`gen-synth`), train and evaluate the verifier (`train`, `eval`),
//! train and apply the evidence reranker (`train-ranker`, `rank`),
//! validate gradients (`gradcheck`), and inspect attention behaviour
//! (`analyze`). All reports are deterministic `key=value` text.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or file-format error,
//! 3 numeric failure.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::data::{self, load_dataset, read_records, save_records, SynthConfig};
use crate::error::{KgatError, Result};
use crate::fsio;
use crate::gradcheck;
use crate::metrics;
use crate::model::{AblationMode, Model, StateSource};
use crate::ranker::{self, Ranker, RankerConfig};
use crate::tape::Tape;
use crate::train::{self, EvidenceMode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "kgat",
    version,
    about = "Kernel graph attention for claim verification over evidence graphs"
)]
struct Cli {
    /// Worker threads. Computation is single-threaded by design (for
    /// bit-reproducible runs); the flag is accepted for interface
    /// compatibility and validated only.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic claim-verification corpus.
    GenSynth(GenSynthArgs),
    /// Train a verifier and save the best-dev checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a trained verifier.
    Eval(EvalArgs),
    /// Train the kernel evidence reranker.
    TrainRanker(TrainRankerArgs),
    /// Rewrite a dataset's candidate order using a trained reranker.
    Rank(RankArgs),
    /// Compare recorded gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Attention diagnostics: entropies, selection histogram, one case.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Directory for train.jsonl and dev.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    dev: usize,
    /// Fraction of verifiable claims with two-sentence golden evidence.
    #[arg(long, default_value_t = 0.3)]
    multi_frac: f64,
    #[arg(long, default_value_t = 120)]
    entities: usize,
    #[arg(long, default_value_t = 40)]
    attributes: usize,
    /// Raw candidates per claim before preparation.
    #[arg(long, default_value_t = 8)]
    candidates: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training split (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Dev split (JSONL).
    #[arg(long)]
    dev: PathBuf,
    /// Run configuration file (`key = value`); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attention mode: full, node, edge, or gat.
    #[arg(long, default_value = "full")]
    mode: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-step/per-epoch history file.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate on golden evidence instead of retrieved candidates.
    #[arg(long)]
    golden_evidence: bool,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainRankerArgs {
    /// Training split (JSONL, raw candidate lists).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 21)]
    kernels: usize,
    #[arg(long, default_value_t = 1e-2)]
    learning_rate: f64,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_pairs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    ranker: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One of full, node, edge, gat, or all.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    kernels: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Check every n-th entry of each parameter.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Claim to export in detail (defaults to the first claim).
    #[arg(long)]
    claim: Option<String>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse arguments, dispatch, print, and map errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; anything else is
            // a usage error (exit 1, not clap's default 2).
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    match dispatch(cli.cmd) {
        Ok(output) => {
            print!("{output}");
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<String> {
    match cmd {
        Cmd::GenSynth(a) => gen_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::TrainRanker(a) => cmd_train_ranker(a),
        Cmd::Rank(a) => cmd_rank(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Analyze(a) => cmd_analyze(a),
    }
}

fn label_counts(instances: &[data::ClaimInstance]) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for i in instances {
        match i.label {
            data::Label::Supports => counts.0 += 1,
            data::Label::Refutes => counts.1 += 1,
            data::Label::NotEnoughInfo => counts.2 += 1,
        }
    }
    counts
}

fn gen_synth(a: GenSynthArgs) -> Result<String> {
    let cfg = SynthConfig {
        seed: a.seed,
        train: a.train,
        dev: a.dev,
        multi_frac: a.multi_frac,
        entities: a.entities,
        attributes: a.attributes,
        candidates_per_claim: a.candidates,
    };
    let corpus = data::generate(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| KgatError::io(a.out_dir.clone(), e))?;
    let train_path = a.out_dir.join("train.jsonl");
    let dev_path = a.out_dir.join("dev.jsonl");
    save_records(&train_path, &corpus.train)?;
    save_records(&dev_path, &corpus.dev)?;
    let (ts, tr, tn) = label_counts(&corpus.train);
    let (ds, dr, dn) = label_counts(&corpus.dev);
    Ok(format!(
        "train={} dev={} vocab={}\n\
         train_supports={ts} train_refutes={tr} train_nei={tn}\n\
         dev_supports={ds} dev_refutes={dr} dev_nei={dn}\n\
         wrote {} and {}\n",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.vocab.len(),
        train_path.display(),
        dev_path.display()
    ))
}

fn parse_mode(s: &str) -> Result<AblationMode> {
    s.parse()
}

fn cmd_train(a: TrainArgs) -> Result<String> {
    let mode = parse_mode(&a.mode)?;
    let config = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    // Golden sentences are pinned into the training candidates so the
    // selection supervision never falls off the slot limit; dev keeps the
    // honest retrieval order.
    let train_set = load_dataset(&a.train, config.evidence, true)?;
    let dev_set = load_dataset(&a.dev, config.evidence, false)?;
    let result = train::train(&config, mode, a.seed, &train_set, &dev_set)?;
    checkpoint::save(&a.out, &result.model, &result.adam, a.seed)?;
    if let Some(history) = &a.history {
        result.history.save(history)?;
    }
    Ok(format!(
        "mode={mode} seed={} train_claims={} dev_claims={}\n\
         steps={} best_epoch={} dev_label_accuracy={:.6}\n\
         wrote {}\n",
        a.seed,
        train_set.len(),
        dev_set.len(),
        result.history.steps.len(),
        result.best_epoch,
        result.best_accuracy,
        a.out.display()
    ))
}

fn eval_report(
    eval: &train::Evaluation,
    evidence_mode: EvidenceMode,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "evidence_mode={}\n",
        match evidence_mode {
            EvidenceMode::Retrieved => "retrieved",
            EvidenceMode::GoldenOnly => "golden",
        }
    ));
    out.push_str(&format!("claims={}\n", eval.verdicts.len()));
    out.push_str(&format!("label_accuracy={:.6}\n", eval.label_accuracy));
    out.push_str(&format!("strict_score={:.6}\n", eval.strict_score));
    match metrics::evidence_prf(&eval.verdicts) {
        Ok(prf) => {
            out.push_str(&format!("evidence_precision={:.6}\n", prf.precision));
            out.push_str(&format!("evidence_recall={:.6}\n", prf.recall));
            out.push_str(&format!("evidence_f1={:.6}\n", prf.f1));
        }
        Err(_) => out.push_str("evidence_precision=n/a (no verifiable claims)\n"),
    }
    match metrics::selection_recall_at_k(&eval.verdicts, 1) {
        Ok(r) => {
            out.push_str(&format!("selection_recall1_micro={:.6}\n", r.micro));
            out.push_str(&format!("selection_recall1_macro={:.6}\n", r.macro_avg));
        }
        Err(_) => out.push_str("selection_recall1_micro=n/a (no golden evidence)\n"),
    }
    out
}

fn cmd_eval(a: EvalArgs) -> Result<String> {
    let (model, _, _) = checkpoint::load(&a.model)?;
    let dataset = load_dataset(&a.data, model.config.evidence_slots, false)?;
    let evidence = if a.golden_evidence {
        EvidenceMode::GoldenOnly
    } else {
        EvidenceMode::Retrieved
    };
    let eval = train::evaluate(&model, &dataset, evidence)?;
    let report = eval_report(&eval, evidence);
    if let Some(path) = &a.report {
        fsio::atomic_write(path, report.as_bytes())?;
    }
    Ok(report)
}

fn cmd_train_ranker(a: TrainRankerArgs) -> Result<String> {
    let config = RankerConfig {
        dim: a.dim,
        kernels: a.kernels,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_pairs: a.batch_pairs,
    };
    let train_set = read_records(&a.train)?;
    let (ranker, history) = ranker::train_ranker(&config, a.seed, &train_set)?;
    ranker.save(&a.out)?;
    let recall = ranker::recall_at_k(&ranker, &train_set, 5)?;
    let mut out = String::new();
    for e in &history {
        out.push_str(&format!(
            "epoch={} pairs={} mean_loss={:.6}\n",
            e.epoch, e.pairs, e.mean_loss
        ));
    }
    out.push_str(&format!("train_recall5={recall:.6}\n"));
    out.push_str(&format!("wrote {}\n", a.out.display()));
    Ok(out)
}

fn cmd_rank(a: RankArgs) -> Result<String> {
    let ranker = Ranker::load(&a.ranker)?;
    let mut records = read_records(&a.data)?;
    ranker.rerank(&mut records)?;
    save_records(&a.out, &records)?;
    Ok(format!(
        "claims={} wrote {}\n",
        records.len(),
        a.out.display()
    ))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<String> {
    let modes: Vec<AblationMode> = if a.mode == "all" {
        AblationMode::ALL.to_vec()
    } else {
        vec![parse_mode(&a.mode)?]
    };
    if a.stride == 0 {
        return Err(KgatError::Usage("--stride must be at least 1".into()));
    }
    let (vocab, instance) = gradcheck::builtin_case();
    let mut out = String::new();
    let mut all_passed = true;
    for mode in modes {
        let config = crate::model::ModelConfig {
            dim: a.dim,
            kernels: a.kernels,
            evidence_slots: data::EVIDENCE_PER_CLAIM,
            max_len: 64,
        };
        let mut model = Model::new(config, vocab.clone(), mode, a.seed)?;
        // Fresh models zero their score heads; move to a generic point
        // so every gradient path is active during the check.
        model.params.randomize(a.seed, 0.4);
        let report =
            gradcheck::check_model(&mut model, &instance, &StateSource::Trainable, a.stride)?;
        out.push_str(&format!("mode={mode}\n"));
        out.push_str(&report.render());
        all_passed &= report.passed();
    }
    if !all_passed {
        // The report already went to stdout via the caller printing the
        // Ok value; emit it here instead and fail loudly.
        print!("{out}");
        return Err(KgatError::Numeric(
            "gradient check found mismatches".into(),
        ));
    }
    Ok(out)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<String> {
    let (model, _, _) = checkpoint::load(&a.model)?;
    let dataset = load_dataset(&a.data, model.config.evidence_slots, false)?;
    let eval = train::evaluate(&model, &dataset, EvidenceMode::Retrieved)?;

    let mut out = String::new();
    out.push_str(&metrics::entropy_report(&eval.traces)?.render());
    let bins = metrics::max_selection_histogram(&eval.verdicts);
    let cells: Vec<String> = bins.iter().map(|b| b.to_string()).collect();
    out.push_str(&format!("max_selection_histogram={}\n", cells.join(",")));

    let index = match &a.claim {
        Some(id) => dataset
            .iter()
            .position(|i| &i.claim_id == id)
            .ok_or_else(|| KgatError::Data(format!("claim {id} not found")))?,
        None if dataset.is_empty() => {
            return Err(KgatError::Data("dataset has no claims".into()))
        }
        None => 0,
    };
    let instance = &dataset[index];
    let graph = model.graph(instance)?;
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, instance, &StateSource::Trainable)?;
    out.push('\n');
    out.push_str(&metrics::export_case_attention(
        instance,
        &graph,
        &model.vocab,
        &fwd.trace,
    ));
    if let Some(path) = &a.out {
        fsio::atomic_write(path, out.as_bytes())?;
    }
    Ok(out)
}
