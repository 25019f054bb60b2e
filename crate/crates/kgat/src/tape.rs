//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node in an
//! arena; [`Tape::backward`] then walks the arena in reverse and applies
//! each operation's hand-derived vector-Jacobian product. The operation
//! set is deliberately small and specialized to what the models in this
//! crate actually compute (gathers, affine maps, cosine similarity,
//! kernel pooling, masked softmax, weighted row sums and a floored
//! negative-log readout).
//!
//! Expensive intermediates (row norms, Gaussian responses) are cached on
//! the node at forward time so the backward sweep performs no
//! exponentials. All iteration is in fixed index order, which keeps
//! gradient accumulation bit-reproducible.

use crate::error::{KgatError, Result};
use crate::kernels::{kernel_pool_cached, KernelBank, PoolCache, SUM_FLOOR};
use crate::tensor::{
    cosine_matrix_cached, dot, masked_softmax_indices, CosineCache, Tensor, NORM_GUARD,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Trainable leaf; `index` identifies the parameter in the bound set.
    Param { index: usize },
    /// Leaf that receives no gradient.
    Constant,
    /// Row gather: `out[t] = table[ids[t]]`.
    GatherRows { table: Var, ids: Vec<usize> },
    /// Row-wise affine map `out = x * w^T + b` (`w` is `out_dim x in_dim`).
    Affine { x: Var, w: Var, b: Var },
    /// Mean of the listed rows of `x`, a `1 x d` result.
    MeanRows { x: Var, rows: Vec<usize> },
    /// Vertical concatenation of row blocks.
    VStack { parts: Vec<Var> },
    /// Contiguous row slice of `x`.
    SliceRows { x: Var, start: usize },
    /// Pairwise cosine similarity between rows of `a` and rows of `b`.
    Cosine { a: Var, b: Var, cache: CosineCache },
    /// Gaussian kernel pooling over a similarity matrix.
    KernelPool {
        m: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
        bank: KernelBank,
        cache: PoolCache,
    },
    /// Scaled row dots: `out_i = scale * <x_i, v>`, a column vector.
    RowDots { x: Var, v: Var, scale: f64 },
    /// Softmax over the listed flat positions; others stay zero.
    MaskedSoftmax { x: Var, support: Vec<usize> },
    /// Weighted sum of rows: `out = sum_i w_i * x_i` with `w` a column.
    WeightedSumRows { x: Var, w: Var },
    /// Horizontal concatenation of two single-row values.
    ConcatCols { a: Var, b: Var },
    /// Elementwise `max(x, 0)`.
    Relu { x: Var },
    /// Stack `1 x 1` scalars into a column vector.
    StackScalars { xs: Vec<Var> },
    /// `-ln(max(x[index], floor))`, a `1 x 1` result.
    PickNegLog { x: Var, index: usize, floor: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Arena of one forward pass, able to run a single backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Value recorded for `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Record a trainable leaf bound to parameter slot `index`.
    pub fn param(&mut self, index: usize, value: Tensor) -> Var {
        self.push(value, Op::Param { index })
    }

    /// Record a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Gather rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Row-wise affine map `x * w^T + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine input width mismatch");
        assert_eq!(bv.cols(), wv.rows(), "affine bias width mismatch");
        let mut out = Tensor::zeros(xv.rows(), wv.rows());
        for i in 0..xv.rows() {
            let xr = xv.row(i);
            let or = out.row_mut(i);
            for (j, o) in or.iter_mut().enumerate() {
                *o = dot(xr, wv.row(j)) + bv.at(0, j);
            }
        }
        self.push(out, Op::Affine { x, w, b })
    }

    /// Mean over the listed rows of `x`.
    pub fn mean_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "mean over no rows");
        let xv = self.value(x);
        let mut out = Tensor::zeros(1, xv.cols());
        for &r in rows {
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        self.push(
            out,
            Op::MeanRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Stack row blocks vertically.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Tensor::zeros(total, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "vstack width mismatch");
            for r in 0..pv.rows() {
                out.row_mut(at).copy_from_slice(pv.row(r));
                at += 1;
            }
        }
        self.push(
            out,
            Op::VStack {
                parts: parts.to_vec(),
            },
        )
    }

    /// Contiguous row slice `x[start .. start + len]`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows(), "slice out of range");
        let mut out = Tensor::zeros(len, xv.cols());
        for r in 0..len {
            out.row_mut(r).copy_from_slice(xv.row(start + r));
        }
        self.push(out, Op::SliceRows { x, start })
    }

    /// Pairwise cosine similarity between rows of `a` and rows of `b`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (m, cache) = cosine_matrix_cached(self.value(a), self.value(b));
        self.push(m, Op::Cosine { a, b, cache })
    }

    /// Gaussian kernel pooling over the listed rows and columns of `m`.
    pub fn kernel_pool(
        &mut self,
        m: Var,
        rows: &[usize],
        cols: &[usize],
        bank: &KernelBank,
    ) -> Result<Var> {
        let (features, cache) = kernel_pool_cached(self.value(m), rows, cols, bank)?;
        Ok(self.push(
            features,
            Op::KernelPool {
                m,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                bank: bank.clone(),
                cache,
            },
        ))
    }

    /// Scaled dot of every row of `x` with the single-row vector `v`.
    pub fn row_dots(&mut self, x: Var, v: Var, scale: f64) -> Var {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.rows(), 1, "row_dots expects a single-row vector");
        assert_eq!(xv.cols(), vv.cols(), "row_dots width mismatch");
        let mut out = Tensor::zeros(xv.rows(), 1);
        for i in 0..xv.rows() {
            out.set(i, 0, scale * dot(xv.row(i), vv.row(0)));
        }
        self.push(out, Op::RowDots { x, v, scale })
    }

    /// Softmax over the listed flat positions of `x`; all other entries
    /// of the result are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, support: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let probs = masked_softmax_indices(xv.data(), support)?;
        let out = Tensor::from_vec(xv.rows(), xv.cols(), probs);
        Ok(self.push(
            out,
            Op::MaskedSoftmax {
                x,
                support: support.to_vec(),
            },
        ))
    }

    /// Weighted sum of the rows of `x` with column-vector weights `w`.
    pub fn weighted_sum_rows(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(wv.cols(), 1, "weights must be a column vector");
        assert_eq!(wv.rows(), xv.rows(), "weight count mismatch");
        let mut out = Tensor::zeros(1, xv.cols());
        for i in 0..xv.rows() {
            let wi = wv.at(i, 0);
            if wi == 0.0 {
                continue;
            }
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(i)) {
                *o += wi * v;
            }
        }
        self.push(out, Op::WeightedSumRows { x, w })
    }

    /// Concatenate two single-row values horizontally.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), 1);
        assert_eq!(bv.rows(), 1);
        let mut data = Vec::with_capacity(av.cols() + bv.cols());
        data.extend_from_slice(av.row(0));
        data.extend_from_slice(bv.row(0));
        let out = Tensor::from_vec(1, av.cols() + bv.cols(), data);
        self.push(out, Op::ConcatCols { a, b })
    }

    /// Elementwise rectifier `max(x, 0)`.
    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_vec(
            xv.rows(),
            xv.cols(),
            xv.data().iter().map(|&v| v.max(0.0)).collect(),
        );
        self.push(out, Op::Relu { x })
    }

    /// Stack `1 x 1` scalars into an `n x 1` column vector.
    pub fn stack_scalars(&mut self, xs: &[Var]) -> Var {
        let mut out = Tensor::zeros(xs.len(), 1);
        for (i, &s) in xs.iter().enumerate() {
            let sv = self.value(s);
            assert_eq!(sv.shape(), (1, 1), "stack_scalars expects scalars");
            out.set(i, 0, sv.at(0, 0));
        }
        self.push(out, Op::StackScalars { xs: xs.to_vec() })
    }

    /// Floored negative log-likelihood readout `-ln(max(x[index], floor))`.
    pub fn pick_neg_log(&mut self, x: Var, index: usize, floor: f64) -> Var {
        let xv = self.value(x);
        let p = xv.data()[index];
        let out = Tensor::from_vec(1, 1, vec![-(p.max(floor).ln())]);
        self.push(out, Op::PickNegLog { x, index, floor })
    }

    /// Run the backward sweep from a scalar root, filling gradients for
    /// every node the root depends on.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.shape() != (1, 1) {
            return Err(KgatError::Numeric(
                "backward root must be a scalar".into(),
            ));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for idx in (0..self.nodes.len()).rev() {
            // Detach this node's gradient while fanning it out to the
            // inputs, then reattach it so callers can inspect leaves.
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            // Reborrow trick: take the node's op apart immutably while
            // writing into other nodes' gradients.
            let (before, rest) = self.nodes.split_at(idx);
            let node = &rest[0];
            match &node.op {
                Op::Param { .. } | Op::Constant => {}
                Op::GatherRows { table, ids } => {
                    let gt = grow(&mut self.grads[table.0], before[table.0].value.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Affine { x, w, b } => {
                    let xv = &before[x.0].value;
                    let wv = &before[w.0].value;
                    {
                        let gx = grow(&mut self.grads[x.0], xv.shape());
                        for i in 0..xv.rows() {
                            let gr = g.row(i);
                            let gxr = gx.row_mut(i);
                            for (j, &gj) in gr.iter().enumerate() {
                                if gj == 0.0 {
                                    continue;
                                }
                                for (o, wv) in gxr.iter_mut().zip(wv.row(j)) {
                                    *o += gj * wv;
                                }
                            }
                        }
                    }
                    {
                        let gw = grow(&mut self.grads[w.0], wv.shape());
                        for i in 0..xv.rows() {
                            let xr = xv.row(i);
                            for (j, &gj) in g.row(i).iter().enumerate() {
                                if gj == 0.0 {
                                    continue;
                                }
                                for (o, xv) in gw.row_mut(j).iter_mut().zip(xr) {
                                    *o += gj * xv;
                                }
                            }
                        }
                    }
                    {
                        let gb = grow(&mut self.grads[b.0], before[b.0].value.shape());
                        for i in 0..g.rows() {
                            for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::MeanRows { x, rows } => {
                    let gx = grow(&mut self.grads[x.0], before[x.0].value.shape());
                    let inv = 1.0 / rows.len() as f64;
                    for &r in rows {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o += inv * v;
                        }
                    }
                }
                Op::VStack { parts } => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = before[p.0].value.rows();
                        let gp = grow(&mut self.grads[p.0], before[p.0].value.shape());
                        for r in 0..rows {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(g.row(at + r)) {
                                *o += v;
                            }
                        }
                        at += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let gx = grow(&mut self.grads[x.0], before[x.0].value.shape());
                    for r in 0..g.rows() {
                        for (o, v) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Cosine { a, b, cache } => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    let bn = bv.rows();
                    // Two passes so each gradient buffer is borrowed once.
                    {
                        let ga = grow(&mut self.grads[a.0], av.shape());
                        for i in 0..av.rows() {
                            for j in 0..bn {
                                let gij = g.at(i, j);
                                if gij == 0.0 {
                                    continue;
                                }
                                let raw = cache.raw[i * bn + j];
                                if raw.abs() > 1.0 {
                                    continue; // clamped: locally constant
                                }
                                let (na, nb) = (cache.norm_a[i], cache.norm_b[j]);
                                if na * nb >= NORM_GUARD {
                                    let denom = na * nb;
                                    let ga_r = ga.row_mut(i);
                                    let a_r = av.row(i);
                                    for ((o, &bj), &ai) in
                                        ga_r.iter_mut().zip(bv.row(j)).zip(a_r)
                                    {
                                        *o += gij * (bj / denom - raw * ai / (na * na));
                                    }
                                } else {
                                    for (o, &bj) in ga.row_mut(i).iter_mut().zip(bv.row(j)) {
                                        *o += gij * bj / NORM_GUARD;
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gb = grow(&mut self.grads[b.0], bv.shape());
                        for i in 0..av.rows() {
                            for j in 0..bn {
                                let gij = g.at(i, j);
                                if gij == 0.0 {
                                    continue;
                                }
                                let raw = cache.raw[i * bn + j];
                                if raw.abs() > 1.0 {
                                    continue;
                                }
                                let (na, nb) = (cache.norm_a[i], cache.norm_b[j]);
                                if na * nb >= NORM_GUARD {
                                    let denom = na * nb;
                                    for ((o, &ai), &bj) in
                                        gb.row_mut(j).iter_mut().zip(av.row(i)).zip(bv.row(j))
                                    {
                                        *o += gij * (ai / denom - raw * bj / (nb * nb));
                                    }
                                } else {
                                    for (o, &ai) in gb.row_mut(j).iter_mut().zip(av.row(i)) {
                                        *o += gij * ai / NORM_GUARD;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::KernelPool {
                    m,
                    rows,
                    cols,
                    bank,
                    cache,
                } => {
                    let mv = &before[m.0].value;
                    let k = bank.len();
                    let gm = grow(&mut self.grads[m.0], mv.shape());
                    for (ri, &r) in rows.iter().enumerate() {
                        for (ki, kernel) in bank.kernels().iter().enumerate() {
                            let s = cache.sums[ri * k + ki];
                            if s < SUM_FLOOR {
                                continue; // floored: locally constant
                            }
                            let gf = g.at(r, ki);
                            if gf == 0.0 {
                                continue;
                            }
                            let coeff = gf / s;
                            let inv_d2 = 1.0 / (kernel.delta * kernel.delta);
                            for (ci, &c) in cols.iter().enumerate() {
                                let resp = cache.gauss[(ri * cols.len() + ci) * k + ki];
                                if resp == 0.0 {
                                    continue;
                                }
                                let x = mv.at(r, c);
                                gm.set(
                                    r,
                                    c,
                                    gm.at(r, c) + coeff * resp * (-(x - kernel.mu) * inv_d2),
                                );
                            }
                        }
                    }
                }
                Op::RowDots { x, v, scale } => {
                    let xv = &before[x.0].value;
                    let vv = &before[v.0].value;
                    {
                        let gx = grow(&mut self.grads[x.0], xv.shape());
                        for i in 0..xv.rows() {
                            let gi = *scale * g.at(i, 0);
                            if gi == 0.0 {
                                continue;
                            }
                            for (o, v) in gx.row_mut(i).iter_mut().zip(vv.row(0)) {
                                *o += gi * v;
                            }
                        }
                    }
                    {
                        let gv = grow(&mut self.grads[v.0], vv.shape());
                        for i in 0..xv.rows() {
                            let gi = *scale * g.at(i, 0);
                            if gi == 0.0 {
                                continue;
                            }
                            for (o, v) in gv.row_mut(0).iter_mut().zip(xv.row(i)) {
                                *o += gi * v;
                            }
                        }
                    }
                }
                Op::MaskedSoftmax { x, support } => {
                    let p = &node.value;
                    let gx = grow(&mut self.grads[x.0], before[x.0].value.shape());
                    let inner: f64 = support
                        .iter()
                        .map(|&i| g.data()[i] * p.data()[i])
                        .sum();
                    for &i in support {
                        gx.data_mut()[i] += p.data()[i] * (g.data()[i] - inner);
                    }
                }
                Op::WeightedSumRows { x, w } => {
                    let xv = &before[x.0].value;
                    let wv = &before[w.0].value;
                    {
                        let gw = grow(&mut self.grads[w.0], wv.shape());
                        for i in 0..xv.rows() {
                            gw.set(i, 0, gw.at(i, 0) + dot(xv.row(i), g.row(0)));
                        }
                    }
                    {
                        let gx = grow(&mut self.grads[x.0], xv.shape());
                        for i in 0..xv.rows() {
                            let wi = wv.at(i, 0);
                            if wi == 0.0 {
                                continue;
                            }
                            for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(0)) {
                                *o += wi * v;
                            }
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let a_cols = before[a.0].value.cols();
                    {
                        let ga = grow(&mut self.grads[a.0], before[a.0].value.shape());
                        for (o, v) in ga.row_mut(0).iter_mut().zip(&g.row(0)[..a_cols]) {
                            *o += v;
                        }
                    }
                    {
                        let gb = grow(&mut self.grads[b.0], before[b.0].value.shape());
                        for (o, v) in gb.row_mut(0).iter_mut().zip(&g.row(0)[a_cols..]) {
                            *o += v;
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = &before[x.0].value;
                    let gx = grow(&mut self.grads[x.0], xv.shape());
                    for (i, (&xi, &gi)) in xv.data().iter().zip(g.data()).enumerate() {
                        if xi > 0.0 {
                            gx.data_mut()[i] += gi;
                        }
                    }
                }
                Op::StackScalars { xs } => {
                    for (i, &s) in xs.iter().enumerate() {
                        let gs = grow(&mut self.grads[s.0], (1, 1));
                        gs.set(0, 0, gs.at(0, 0) + g.at(i, 0));
                    }
                }
                Op::PickNegLog { x, index, floor } => {
                    let p = before[x.0].value.data()[*index];
                    let gx = grow(&mut self.grads[x.0], before[x.0].value.shape());
                    if p > *floor {
                        gx.data_mut()[*index] += g.at(0, 0) * (-1.0 / p);
                    }
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Add the gradients that reached each parameter leaf into `sink`,
    /// indexed by the parameter slot passed to [`Tape::param`].
    pub fn accumulate_param_grads(&self, sink: &mut [Tensor]) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param { index }, Some(g)) = (&node.op, grad) {
                let target = &mut sink[*index];
                assert_eq!(target.shape(), g.shape(), "parameter gradient shape");
                for (o, v) in target.data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
        }
    }
}

/// Get-or-allocate a gradient buffer of the given shape.
fn grow(slot: &mut Option<Tensor>, shape: (usize, usize)) -> &mut Tensor {
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape.0, shape.1));
    }
    slot.as_mut().unwrap()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::testcheck::check_gradients;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    /// Reduce any node to a scalar via a fixed weighting so gradients of
    /// every entry are exercised.
    fn to_scalar(tape: &mut Tape, v: Var) -> Var {
        let (r, c) = tape.value(v).shape();
        let w = tape.constant(Tensor::from_vec(
            r,
            1,
            (0..r).map(|i| 0.3 + 0.1 * i as f64).collect(),
        ));
        let summed = tape.weighted_sum_rows(v, w); // 1 x c
        let probe = tape.constant(Tensor::from_vec(
            1,
            c,
            (0..c).map(|j| 0.7 - 0.05 * j as f64).collect(),
        ));
        tape.row_dots(summed, probe, 1.0)
    }

    #[test]
    fn affine_gather_mean_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = rand_tensor(&mut rng, 5, 3);
        let w = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 1, 4);
        check_gradients(&[table, w, b], |tape, vs| {
            let h = tape.gather_rows(vs[0], &[0, 2, 2, 4]);
            let y = tape.affine(h, vs[1], vs[2]);
            let m = tape.mean_rows(y, &[0, 1, 3]);
            let probe = tape.constant(Tensor::from_vec(1, 4, vec![0.2, -0.4, 0.6, 0.1]));
            tape.row_dots(m, probe, 1.3)
        }, 1e-6);
    }

    #[test]
    fn cosine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 2, 4);
        check_gradients(&[a, b], |tape, vs| {
            let m = tape.cosine(vs[0], vs[1]);
            to_scalar(tape, m)
        }, 1e-5);
    }

    #[test]
    fn cosine_gradient_with_guarded_row() {
        // One near-zero row drives the denominator into its guard; the
        // analytic gradient must match the guarded expression.
        let a = Tensor::from_rows(&[vec![1e-6, -2e-6, 5e-7]]);
        let b = Tensor::from_rows(&[vec![1e-6, 3e-6, -1e-6]]);
        check_gradients(&[a, b], |tape, vs| {
            let m = tape.cosine(vs[0], vs[1]);
            to_scalar(tape, m)
        }, 1e-4);
    }

    #[test]
    fn kernel_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Similarities away from +/-1 so no kernel sits at its stationary
        // point or under the floor by accident.
        let a = rand_tensor(&mut rng, 4, 6);
        let b = rand_tensor(&mut rng, 5, 6);
        let bank = KernelBank::default_bank(5).unwrap();
        check_gradients(&[a, b], move |tape, vs| {
            let m = tape.cosine(vs[0], vs[1]);
            let f = tape.kernel_pool(m, &[0, 1, 3], &[0, 2, 3, 4], &bank).unwrap();
            to_scalar(tape, f)
        }, 1e-4);
    }

    #[test]
    fn softmax_weighted_sum_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_tensor(&mut rng, 5, 3);
        let s = rand_tensor(&mut rng, 5, 1);
        check_gradients(&[x, s], |tape, vs| {
            let p = tape.masked_softmax(vs[1], &[0, 2, 3]).unwrap();
            let z = tape.weighted_sum_rows(vs[0], p);
            let probe = tape.constant(Tensor::from_vec(1, 3, vec![0.5, -0.2, 0.9]));
            tape.row_dots(z, probe, 1.0)
        }, 1e-5);
    }

    #[test]
    fn mlp_with_relu_and_neg_log_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = rand_tensor(&mut rng, 1, 4);
        let w1 = rand_tensor(&mut rng, 3, 4);
        let b1 = rand_tensor(&mut rng, 1, 3);
        let w2 = rand_tensor(&mut rng, 3, 3);
        let b2 = rand_tensor(&mut rng, 1, 3);
        check_gradients(&[x, w1, b1, w2, b2], |tape, vs| {
            let h = tape.affine(vs[0], vs[1], vs[2]);
            let h = tape.relu(h);
            let logits = tape.affine(h, vs[3], vs[4]);
            let p = tape.masked_softmax(logits, &[0, 1, 2]).unwrap();
            tape.pick_neg_log(p, 1, 1e-12)
        }, 1e-5);
    }

    #[test]
    fn stack_concat_slice_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = rand_tensor(&mut rng, 3, 2);
        let b = rand_tensor(&mut rng, 2, 2);
        check_gradients(&[a, b], |tape, vs| {
            let stacked = tape.vstack(&[vs[0], vs[1]]);
            let top = tape.slice_rows(stacked, 1, 1);
            let bottom = tape.slice_rows(stacked, 3, 1);
            let cat = tape.concat_cols(top, bottom);
            let probe = tape.constant(Tensor::from_vec(1, 4, vec![0.1, 0.7, -0.3, 0.4]));
            tape.row_dots(cat, probe, 1.0)
        }, 1e-5);
    }

    #[test]
    fn shared_input_accumulates_both_paths() {
        // The same tensor feeds both sides of a cosine; the tape must sum
        // both contributions, mirroring self-similarity inside one node.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, 4, 3);
        check_gradients(&[x], |tape, vs| {
            let top = tape.slice_rows(vs[0], 0, 2);
            let bottom = tape.slice_rows(vs[0], 2, 2);
            let m = tape.cosine(top, bottom);
            to_scalar(tape, m)
        }, 1e-5);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(0, Tensor::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn pick_neg_log_floor_zeroes_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(0, Tensor::from_vec(1, 2, vec![1e-15, 1.0]));
        let loss = tape.pick_neg_log(x, 0, 1e-12);
        assert_eq!(tape.value(loss).at(0, 0), -(1e-12f64).ln());
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[0], 0.0);
    }
}
