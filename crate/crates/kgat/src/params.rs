//! Named trainable parameters with gradient accumulators.
//!
//! A [`ParamSet`] owns every tensor a model trains, in a fixed order that
//! doubles as the serialization order. Gradients are accumulated across
//! instances by [`crate::tape::Tape::accumulate_param_grads`] and consumed
//! by the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One named tensor plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a parameter; names must be unique. Returns its slot index.
    pub fn add(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Reset every gradient accumulator to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.clear();
        }
    }

    /// Multiply every accumulated gradient by `c` (e.g. to average over a
    /// batch before an optimizer step).
    pub fn scale_grads(&mut self, c: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Record every parameter as a leaf on `tape`; the returned handles
    /// are indexed by parameter slot.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p.value.clone()))
            .collect()
    }

    /// Overwrite every parameter with uniform values from `[-bound,
    /// bound]`. Gradient checks and oracle comparisons use this to put
    /// the model at a generic point where every computation path
    /// carries gradient (fresh models start with zeroed score heads).
    pub fn randomize(&mut self, seed: u64, bound: f64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    /// Add the gradients recorded on `tape` into the accumulators.
    pub fn accumulate_from(&mut self, tape: &Tape) {
        let mut sinks: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        tape.accumulate_param_grads(&mut sinks);
        for (p, s) in self.params.iter_mut().zip(sinks) {
            for (o, v) in p.grad.data_mut().iter_mut().zip(s.data()) {
                *o += v;
            }
        }
    }
}

/// Uniform init on `[-bound, bound]`.
pub fn uniform_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    )
}

/// Xavier/Glorot uniform init for a `fan_out x fan_in` weight matrix.
pub fn xavier_init(rng: &mut ChaCha20Rng, fan_out: usize, fan_in: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_init(rng, fan_out, fan_in, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn add_and_lookup() {
        let mut set = ParamSet::new();
        let a = set.add("w", Tensor::zeros(2, 3));
        let b = set.add("b", Tensor::zeros(1, 3));
        assert_eq!(set.index_of("w"), Some(a));
        assert_eq!(set.index_of("b"), Some(b));
        assert_eq!(set.get(a).grad.shape(), (2, 3));
    }

    #[test]
    fn grads_accumulate_across_tapes() {
        let mut set = ParamSet::new();
        set.add("x", Tensor::from_vec(1, 1, vec![2.0]));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let vars = set.bind(&mut tape);
            // loss = -ln(x) evaluated at 2 => dloss/dx = -0.5
            let loss = tape.pick_neg_log(vars[0], 0, 1e-12);
            tape.backward(loss).unwrap();
            set.accumulate_from(&tape);
        }
        assert!((set.get(0).grad.at(0, 0) + 1.0).abs() < 1e-12);
        let mut set2 = set.clone();
        set2.scale_grads(0.5);
        assert!((set2.get(0).grad.at(0, 0) + 0.5).abs() < 1e-12);
        set2.zero_grads();
        assert_eq!(set2.get(0).grad.at(0, 0), 0.0);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let mut r1 = ChaCha20Rng::seed_from_u64(5);
        let mut r2 = ChaCha20Rng::seed_from_u64(5);
        assert_eq!(
            xavier_init(&mut r1, 3, 4).data(),
            xavier_init(&mut r2, 3, 4).data()
        );
    }
}
