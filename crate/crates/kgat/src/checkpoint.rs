//! Self-describing model checkpoints.
//!
//! A checkpoint is a single line-oriented text file carrying everything
//! needed to resume or evaluate a run: structural configuration, the
//! ablation mode, the seed, the full vocabulary, the kernel bank, every
//! named parameter, and the optimizer moments. Floats are written with
//! 17 significant digits, so save/load round-trips are bit-exact and a
//! resumed run continues identically.
//!
//! Layout:
//!
//! ```text
//! kgat-checkpoint v1
//! mode <full|node|edge|gat>
//! seed <u64>
//! dim <d>
//! kernels <k>
//! evidence_slots <l>
//! max_len <n>
//! vocab <count>
//! <token>                      (one per line, id = order)
//! bank <count>
//! <mu> <delta>                 (one kernel per line)
//! params <count>
//! param <name> <rows> <cols>
//! <row of floats>              (x rows)
//! adam <step-count>
//! moment1 <name> <rows> <cols> (+ rows, for every parameter in order)
//! moment2 <name> <rows> <cols> (+ rows, likewise)
//! end
//! ```

use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{KgatError, Result};
use crate::fsio;
use crate::kernels::{Kernel, KernelBank};
use crate::model::{AblationMode, Model, ModelConfig};
use crate::optim::Adam;
use crate::params::ParamSet;
use crate::tensor::Tensor;

const HEADER: &str = "kgat-checkpoint v1";

pub(crate) fn fmt_row(row: &[f64]) -> String {
    let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
    cells.join(" ")
}

/// Serialize a model plus optimizer state.
pub fn save(path: &Path, model: &Model, adam: &Adam, seed: u64) -> Result<()> {
    let mut text = String::new();
    text.push_str(HEADER);
    text.push('\n');
    text.push_str(&format!("mode {}\n", model.mode));
    text.push_str(&format!("seed {seed}\n"));
    text.push_str(&format!("dim {}\n", model.config.dim));
    text.push_str(&format!("kernels {}\n", model.config.kernels));
    text.push_str(&format!("evidence_slots {}\n", model.config.evidence_slots));
    text.push_str(&format!("max_len {}\n", model.config.max_len));

    text.push_str(&format!("vocab {}\n", model.vocab.len()));
    for t in model.vocab.tokens() {
        text.push_str(t);
        text.push('\n');
    }

    text.push_str(&format!("bank {}\n", model.bank.len()));
    for k in model.bank.kernels() {
        text.push_str(&format!("{:.16e} {:.16e}\n", k.mu, k.delta));
    }

    text.push_str(&format!("params {}\n", model.params.len()));
    for i in 0..model.params.len() {
        let p = model.params.get(i);
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

    text.push_str(&format!("adam {}\n", adam.step_count()));
    for (tag, moments) in [
        ("moment1", adam.first_moments()),
        ("moment2", adam.second_moments()),
    ] {
        if moments.len() != model.params.len() {
            return Err(KgatError::ConfigMismatch(format!(
                "optimizer tracks {} tensors, model has {} parameters",
                moments.len(),
                model.params.len()
            )));
        }
        for (i, m) in moments.iter().enumerate() {
            let p = model.params.get(i);
            text.push_str(&format!("{tag} {} {} {}\n", p.name, m.rows(), m.cols()));
            for r in 0..m.rows() {
                text.push_str(&fmt_row(m.row(r)));
                text.push('\n');
            }
        }
    }
    text.push_str("end\n");
    fsio::atomic_write(path, text.as_bytes())
}

pub(crate) struct Reader<'a> {
    pub(crate) path: &'a Path,
    pub(crate) lines: std::str::Lines<'a>,
    pub(crate) line_no: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn next(&mut self, what: &str) -> Result<&'a str> {
        self.line_no += 1;
        self.lines.next().ok_or_else(|| KgatError::Parse {
            path: self.path.to_path_buf(),
            line: self.line_no,
            message: format!("file ends where {what} was expected"),
        })
    }

    pub(crate) fn err(&self, message: String) -> KgatError {
        KgatError::Parse {
            path: self.path.to_path_buf(),
            line: self.line_no,
            message,
        }
    }

    /// Read `keyword <value>` and parse the value.
    pub(crate) fn field<T: std::str::FromStr>(&mut self, keyword: &str) -> Result<T> {
        let line = self.next(keyword)?;
        let rest = line
            .strip_prefix(keyword)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected {keyword:?} field, got {line:?}")))?;
        rest.trim()
            .parse()
            .map_err(|_| self.err(format!("bad value {rest:?} for {keyword}")))
    }

    pub(crate) fn float_row(&mut self, cols: usize) -> Result<Vec<f64>> {
        let line = self.next("a row of floats")?;
        let mut out = Vec::with_capacity(cols);
        for cell in line.split_whitespace() {
            let v: f64 = cell
                .parse()
                .map_err(|_| self.err(format!("bad float {cell:?}")))?;
            if !v.is_finite() {
                return Err(self.err(format!("non-finite value {v}")));
            }
            out.push(v);
        }
        if out.len() != cols {
            return Err(self.err(format!("expected {cols} values, got {}", out.len())));
        }
        Ok(out)
    }

    pub(crate) fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.float_row(cols)?);
        }
        Ok(Tensor::from_vec(rows, cols, data))
    }

    /// Read `tag <name> <rows> <cols>`.
    pub(crate) fn tensor_header(&mut self, tag: &str) -> Result<(String, usize, usize)> {
        let line = self.next(tag)?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != tag {
            return Err(self.err(format!("expected a {tag} header, got {line:?}")));
        }
        let rows = parts[2]
            .parse()
            .map_err(|_| self.err("bad row count".into()))?;
        let cols = parts[3]
            .parse()
            .map_err(|_| self.err("bad column count".into()))?;
        Ok((parts[1].to_string(), rows, cols))
    }
}

/// Load a checkpoint, rebuilding the model and optimizer exactly as
/// saved.
pub fn load(path: &Path) -> Result<(Model, Adam, u64)> {
    let text = fsio::read_to_string(path)?;
    let mut r = Reader {
        path,
        lines: text.lines(),
        line_no: 0,
    };

    let header = r.next("the header")?;
    if header != HEADER {
        return Err(r.err(format!("unsupported checkpoint header {header:?}")));
    }
    let mode: AblationMode = r
        .field::<String>("mode")?
        .parse()
        .map_err(|e: KgatError| r.err(e.to_string()))?;
    let seed: u64 = r.field("seed")?;
    let config = ModelConfig {
        dim: r.field("dim")?,
        kernels: r.field("kernels")?,
        evidence_slots: r.field("evidence_slots")?,
        max_len: r.field("max_len")?,
    };

    let vocab_len: usize = r.field("vocab")?;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        tokens.push(r.next("a vocabulary token")?.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    if vocab.len() != vocab_len {
        return Err(r.err(format!(
            "vocabulary lists {} tokens but {vocab_len} were declared",
            vocab.len()
        )));
    }

    let bank_len: usize = r.field("bank")?;
    let mut kernels = Vec::with_capacity(bank_len);
    for _ in 0..bank_len {
        let row = r.float_row(2)?;
        kernels.push(Kernel {
            mu: row[0],
            delta: row[1],
        });
    }
    let bank = KernelBank::new(kernels)?;
    if bank.len() != config.kernels {
        return Err(KgatError::ConfigMismatch(format!(
            "bank holds {} kernels, config says {}",
            bank.len(),
            config.kernels
        )));
    }

    let param_count: usize = r.field("params")?;
    let mut params = ParamSet::new();
    for _ in 0..param_count {
        let (name, rows, cols) = r.tensor_header("param")?;
        let value = r.tensor(rows, cols)?;
        params.add(&name, value);
    }

    let t: u64 = r.field("adam")?;
    let mut moments = Vec::new();
    for tag in ["moment1", "moment2"] {
        let mut tensors = Vec::with_capacity(param_count);
        for i in 0..param_count {
            let (name, rows, cols) = r.tensor_header(tag)?;
            let expected = params.get(i);
            if name != expected.name {
                return Err(KgatError::ConfigMismatch(format!(
                    "{tag} for {name:?} does not match parameter {:?}",
                    expected.name
                )));
            }
            if (rows, cols) != expected.value.shape() {
                return Err(KgatError::ConfigMismatch(format!(
                    "{tag} for {name:?} has shape {rows}x{cols}, parameter is {}x{}",
                    expected.value.rows(),
                    expected.value.cols()
                )));
            }
            tensors.push(r.tensor(rows, cols)?);
        }
        moments.push(tensors);
    }
    let second = moments.pop().expect("two moment groups");
    let first = moments.pop().expect("two moment groups");
    let adam = Adam::from_state(t, first, second);

    let tail = r.next("the end marker")?;
    if tail != "end" {
        return Err(r.err(format!("expected end marker, got {tail:?}")));
    }

    let model = Model::from_parts(config, vocab, bank, mode, params);
    Ok((model, adam, seed))
}
