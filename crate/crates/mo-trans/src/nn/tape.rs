//! Reverse-mode autodiff over a flat operation tape.
//!
//! A [`Tape`] records primitive ops as they execute forward; [`Tape::backward`]
//! sweeps the recording once in reverse, accumulating gradients for every
//! node that transitively feeds the loss. Parameters enter the tape as
//! [`Tape::param`] nodes tagged with their index in the owning store, so the
//! caller can map gradients back to parameters after the sweep.
//!
//! The op set is exactly what the transformer needs: embedding lookup, dense
//! matmul against weights, batched matmul, bias/elementwise add, scaling,
//! last-dim transpose, head split/merge, masked row softmax, ReLU, layer
//! norm, and a fused mean cross-entropy over non-pad targets.

use super::tensor::{Element, Tensor};
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Attention mask: optional causal triangle plus an optional per-batch
/// key-validity row (false = padding key, never attended).
#[derive(Debug, Clone)]
pub struct AttnMask {
    /// Heads per batch item; softmax input groups are `batch × heads`.
    pub heads: usize,
    pub causal: bool,
    /// Flattened `[batch][key_len]`; `None` keeps every key.
    pub key_keep: Option<Vec<bool>>,
}

impl AttnMask {
    fn masked(&self, group: usize, q: usize, k: usize, k_len: usize) -> bool {
        if self.causal && k > q {
            return true;
        }
        match &self.key_keep {
            Some(keep) => !keep[(group / self.heads) * k_len + k],
            None => false,
        }
    }
}

enum Op<T: Element> {
    Leaf,
    Param(usize),
    Embed { table: NodeId, ids: Vec<usize>, batch: usize, seq: usize },
    MatMul { x: NodeId, w: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: T },
    Bmm { a: NodeId, b: NodeId },
    TransposeLast { x: NodeId },
    SplitHeads { x: NodeId, heads: usize },
    MergeHeads { x: NodeId, heads: usize },
    Softmax { x: NodeId, mask: Option<AttnMask> },
    Relu { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, mean: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, pad: usize, probs: Vec<T>, count: usize },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Result of a backward sweep: per-node gradients. Interior gradients are
/// consumed during the sweep; terminal nodes (params, leaves) keep theirs.
pub struct Gradients<T: Element> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.slots.get_mut(id.0).and_then(Option::take)
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
fn mm_acc<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k,n] += aᵀ[k,m] · b[m,n]` with `a` stored as `[m,k]`
fn mm_at_acc<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k2] += a[m,n] · bᵀ[n,k2]` with `b` stored as `[k2,n]`
fn mm_bt_acc<T: Element>(a: &[T], b: &[T], m: usize, n: usize, k2: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k2..(i + 1) * k2];
        for (j2, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j2 * n..(j2 + 1) * n];
            let mut dot = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                dot += av * bv;
            }
            *o += dot;
        }
    }
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Non-differentiable input (positional encodings, zero probes, …).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable parameter; `index` is its position in the owning store.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Param(index), true)
    }

    /// Row lookup: `ids` is a rectangular `[batch][seq]` index matrix into
    /// `table` (`[vocab, dim]`); the result is `[batch, seq, dim]`.
    pub fn embed(&mut self, table: NodeId, ids: &[Vec<usize>]) -> Result<NodeId, NnError> {
        let (vocab, dim) = match self.value(table).shape() {
            &[v, d] => (v, d),
            s => return Err(NnError::shape("embed", format!("table must be rank 2, got {s:?}"))),
        };
        let batch = ids.len();
        if batch == 0 || ids[0].is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let seq = ids[0].len();
        let mut flat = Vec::with_capacity(batch * seq);
        for row in ids {
            if row.len() != seq {
                return Err(NnError::shape("embed", "ragged id matrix"));
            }
            for &id in row {
                if id >= vocab {
                    return Err(NnError::TokenOutOfRange { id: id as u32, vocab });
                }
                flat.push(id);
            }
        }
        let table_data = self.value(table).data();
        let mut out = Vec::with_capacity(batch * seq * dim);
        for &id in &flat {
            out.extend_from_slice(&table_data[id * dim..(id + 1) * dim]);
        }
        let needs = self.needs(table);
        let value = Tensor::new(&[batch, seq, dim], out).expect("constructed shape");
        Ok(self.push(value, Op::Embed { table, ids: flat, batch, seq }, needs))
    }

    /// `[g, s, k] × [k, n] → [g, s, n]`
    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, NnError> {
        let (g, s, k) = match self.value(x).shape() {
            &[a, b, c] => (a, b, c),
            sh => return Err(NnError::shape("matmul", format!("lhs must be rank 3, got {sh:?}"))),
        };
        let (wk, n) = match self.value(w).shape() {
            &[a, b] => (a, b),
            sh => return Err(NnError::shape("matmul", format!("rhs must be rank 2, got {sh:?}"))),
        };
        if k != wk {
            return Err(NnError::shape("matmul", format!("inner dims {k} vs {wk}")));
        }
        let mut out = Tensor::zeros(&[g, s, n]);
        mm_acc(self.value(x).data(), self.value(w).data(), g * s, k, n, out.data_mut());
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::MatMul { x, w }, needs))
    }

    /// `[g, s, n] + [n]` broadcast over the leading dims.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (g, s, n) = match self.value(x).shape() {
            &[a, bb, c] => (a, bb, c),
            sh => {
                return Err(NnError::shape("add_bias", format!("lhs must be rank 3, got {sh:?}")))
            }
        };
        let bn = match self.value(b).shape() {
            &[v] => v,
            sh => {
                return Err(NnError::shape("add_bias", format!("bias must be rank 1, got {sh:?}")))
            }
        };
        if n != bn {
            return Err(NnError::shape("add_bias", format!("feature dims {n} vs {bn}")));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        let _ = (g, s);
        Ok(self.push(out, Op::AddBias { x, b }, needs))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += bv;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let factor = T::from_f64(factor);
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= factor;
        }
        let needs = self.needs(x);
        self.push(out, Op::Scale { x, factor }, needs)
    }

    /// Batched matmul `[g, m, k] × [g, k, n] → [g, m, n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (ga, m, k) = match self.value(a).shape() {
            &[x, y, z] => (x, y, z),
            sh => return Err(NnError::shape("bmm", format!("lhs must be rank 3, got {sh:?}"))),
        };
        let (gb, kb, n) = match self.value(b).shape() {
            &[x, y, z] => (x, y, z),
            sh => return Err(NnError::shape("bmm", format!("rhs must be rank 3, got {sh:?}"))),
        };
        if ga != gb || k != kb {
            return Err(NnError::shape("bmm", format!("[{ga},{m},{k}] vs [{gb},{kb},{n}]")));
        }
        let mut out = Tensor::zeros(&[ga, m, n]);
        {
            let a_data = self.value(a).data();
            let b_data = self.value(b).data();
            let out_data = out.data_mut();
            for g in 0..ga {
                mm_acc(
                    &a_data[g * m * k..(g + 1) * m * k],
                    &b_data[g * k * n..(g + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out_data[g * m * n..(g + 1) * m * n],
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Bmm { a, b }, needs))
    }

    /// `[g, m, n] → [g, n, m]`
    pub fn transpose_last(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let (g, m, n) = match self.value(x).shape() {
            &[a, b, c] => (a, b, c),
            sh => return Err(NnError::shape("transpose", format!("rank 3 required, got {sh:?}"))),
        };
        let mut out = Tensor::zeros(&[g, n, m]);
        {
            let src = self.value(x).data();
            let dst = out.data_mut();
            for gi in 0..g {
                for i in 0..m {
                    for j in 0..n {
                        dst[gi * n * m + j * m + i] = src[gi * m * n + i * n + j];
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::TransposeLast { x }, needs))
    }

    /// `[batch, seq, heads·hd] → [batch·heads, seq, hd]`
    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId, NnError> {
        let (b, s, d) = match self.value(x).shape() {
            &[a, bb, c] => (a, bb, c),
            sh => {
                return Err(NnError::shape("split_heads", format!("rank 3 required, got {sh:?}")))
            }
        };
        if heads == 0 || d % heads != 0 {
            return Err(NnError::HeadsDim { heads, dim: d });
        }
        let hd = d / heads;
        let mut out = Tensor::zeros(&[b * heads, s, hd]);
        {
            let src = self.value(x).data();
            let dst = out.data_mut();
            for bi in 0..b {
                for h in 0..heads {
                    for si in 0..s {
                        let from = bi * s * d + si * d + h * hd;
                        let to = (bi * heads + h) * s * hd + si * hd;
                        dst[to..to + hd].copy_from_slice(&src[from..from + hd]);
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::SplitHeads { x, heads }, needs))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId, NnError> {
        let (gh, s, hd) = match self.value(x).shape() {
            &[a, b, c] => (a, b, c),
            sh => {
                return Err(NnError::shape("merge_heads", format!("rank 3 required, got {sh:?}")))
            }
        };
        if heads == 0 || gh % heads != 0 {
            return Err(NnError::HeadsDim { heads, dim: gh });
        }
        let b = gh / heads;
        let d = heads * hd;
        let mut out = Tensor::zeros(&[b, s, d]);
        {
            let src = self.value(x).data();
            let dst = out.data_mut();
            for bi in 0..b {
                for h in 0..heads {
                    for si in 0..s {
                        let from = (bi * heads + h) * s * hd + si * hd;
                        let to = bi * s * d + si * d + h * hd;
                        dst[to..to + hd].copy_from_slice(&src[from..from + hd]);
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::MergeHeads { x, heads }, needs))
    }

    /// Row softmax over the last dim of `[g, q, k]`, with masked positions
    /// (causal future and/or padding keys) exactly zero. A fully masked row
    /// yields zeros.
    pub fn softmax_rows(&mut self, x: NodeId, mask: Option<AttnMask>) -> Result<NodeId, NnError> {
        let (g, q_len, k_len) = match self.value(x).shape() {
            &[a, b, c] => (a, b, c),
            sh => return Err(NnError::shape("softmax", format!("rank 3 required, got {sh:?}"))),
        };
        if let Some(m) = &mask {
            if m.heads == 0 || g % m.heads != 0 {
                return Err(NnError::HeadsDim { heads: m.heads, dim: g });
            }
            if let Some(keep) = &m.key_keep {
                let want = (g / m.heads) * k_len;
                if keep.len() != want {
                    return Err(NnError::shape(
                        "softmax",
                        format!("key_keep length {} vs batch×keys {want}", keep.len()),
                    ));
                }
            }
        }
        let mut out = self.value(x).clone();
        {
            let data = out.data_mut();
            for gi in 0..g {
                for qi in 0..q_len {
                    let row = &mut data[(gi * q_len + qi) * k_len..(gi * q_len + qi + 1) * k_len];
                    let is_masked = |k: usize| -> bool {
                        mask.as_ref().is_some_and(|m| m.masked(gi, qi, k, k_len))
                    };
                    let mut max = None::<T>;
                    for (k, &v) in row.iter().enumerate() {
                        if !is_masked(k) {
                            max = Some(max.map_or(v, |m| m.maximum(v)));
                        }
                    }
                    let Some(max) = max else {
                        row.fill(T::ZERO);
                        continue;
                    };
                    let mut denom = T::ZERO;
                    for (k, v) in row.iter_mut().enumerate() {
                        if is_masked(k) {
                            *v = T::ZERO;
                        } else {
                            *v = (*v - max).exp();
                            denom += *v;
                        }
                    }
                    for v in row.iter_mut() {
                        *v = *v / denom;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::Softmax { x, mask }, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < T::ZERO {
                *v = T::ZERO;
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    /// Per-position layer norm over the feature dim of `[g, s, d]`, then
    /// affine `gain ⊙ x̂ + bias`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, NnError> {
        let (g, s, d) = match self.value(x).shape() {
            &[a, b, c] => (a, b, c),
            sh => return Err(NnError::shape("layer_norm", format!("rank 3 required, got {sh:?}"))),
        };
        for (name, id) in [("gain", gain), ("bias", bias)] {
            if self.value(id).shape() != [d] {
                return Err(NnError::shape(
                    "layer_norm",
                    format!("{name} shape {:?} vs features {d}", self.value(id).shape()),
                ));
            }
        }
        let eps = T::from_f64(eps);
        let rows = g * s;
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Tensor::zeros(&[g, s, d]);
        {
            let src = self.value(x).data();
            let gain_d = self.value(gain).data();
            let bias_d = self.value(bias).data();
            let dst = out.data_mut();
            let inv_d = T::ONE / T::from_f64(d as f64);
            for r in 0..rows {
                let row = &src[r * d..(r + 1) * d];
                let mut mu = T::ZERO;
                for &v in row {
                    mu += v;
                }
                mu *= inv_d;
                let mut var = T::ZERO;
                for &v in row {
                    let c = v - mu;
                    var += c * c;
                }
                var *= inv_d;
                let inv = T::ONE / (var + eps).sqrt();
                mean.push(mu);
                inv_std.push(inv);
                let out_row = &mut dst[r * d..(r + 1) * d];
                for ((o, &v), (&gn, &bs)) in
                    out_row.iter_mut().zip(row).zip(gain_d.iter().zip(bias_d))
                {
                    *o = (v - mu) * inv * gn + bs;
                }
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, mean, inv_std }, needs))
    }

    /// Mean cross-entropy of `[batch, seq, vocab]` logits against a
    /// rectangular `[batch][seq]` target matrix, ignoring positions whose
    /// target is `pad`. Returns a rank-0 node.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Vec<usize>],
        pad: usize,
    ) -> Result<NodeId, NnError> {
        let (b, s, v) = match self.value(logits).shape() {
            &[x, y, z] => (x, y, z),
            sh => {
                return Err(NnError::shape("cross_entropy", format!("rank 3 required, got {sh:?}")))
            }
        };
        if targets.len() != b || targets.iter().any(|row| row.len() != s) {
            return Err(NnError::shape("cross_entropy", "target matrix must match [batch, seq]"));
        }
        let mut flat = Vec::with_capacity(b * s);
        for row in targets {
            for &t in row {
                if t != pad && t >= v {
                    return Err(NnError::TokenOutOfRange { id: t as u32, vocab: v });
                }
                flat.push(t);
            }
        }
        let count = flat.iter().filter(|&&t| t != pad).count();
        if count == 0 {
            return Err(NnError::EmptyTargets);
        }
        let mut probs = vec![T::ZERO; b * s * v];
        let mut loss = T::ZERO;
        {
            let data = self.value(logits).data();
            for (r, &t) in flat.iter().enumerate() {
                if t == pad {
                    continue;
                }
                let row = &data[r * v..(r + 1) * v];
                let mut max = row[0];
                for &x in row {
                    max = max.maximum(x);
                }
                let mut denom = T::ZERO;
                for &x in row {
                    denom += (x - max).exp();
                }
                let lse = max + denom.ln();
                loss += lse - row[t];
                let p_row = &mut probs[r * v..(r + 1) * v];
                for (p, &x) in p_row.iter_mut().zip(row) {
                    *p = (x - max).exp() / denom;
                }
            }
        }
        loss = loss / T::from_f64(count as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: flat, pad, probs, count },
            needs,
        ))
    }

    fn accumulate(
        slots: &mut [Option<Tensor<T>>],
        nodes: &[Node<T>],
        id: NodeId,
        write: impl FnOnce(&mut Tensor<T>),
    ) {
        if !nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut slots[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(nodes[id.0].value.shape()));
        }
        write(slot.as_mut().expect("just filled"));
    }

    /// Reverse sweep from a scalar `loss` node. Gradients of terminal nodes
    /// (params, leaves) survive in the result; interior gradients are
    /// consumed as the sweep passes them.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NnError> {
        if self.value(loss).rank() != 0 {
            return Err(NnError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(T::ONE));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let node = &self.nodes[id];
            // Terminal nodes keep their gradient for the caller.
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = slots[id].take() else {
                continue;
            };
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!("handled above"),
                Op::Embed { table, ids, batch, seq } => {
                    let dim = nodes[table.0].value.shape()[1];
                    Self::accumulate(&mut slots, nodes, *table, |dt| {
                        let dt = dt.data_mut();
                        for (r, &tok) in ids.iter().enumerate() {
                            let gr = &g.data()[r * dim..(r + 1) * dim];
                            let row = &mut dt[tok * dim..(tok + 1) * dim];
                            for (o, &gv) in row.iter_mut().zip(gr) {
                                *o += gv;
                            }
                        }
                        let _ = (batch, seq);
                    });
                }
                Op::MatMul { x, w } => {
                    let (gr, s, k) = nodes[x.0].value.dims3();
                    let n = nodes[w.0].value.dims2().1;
                    let m = gr * s;
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        mm_bt_acc(g.data(), nodes[w.0].value.data(), m, n, k, dx.data_mut());
                    });
                    Self::accumulate(&mut slots, nodes, *w, |dw| {
                        mm_at_acc(nodes[x.0].value.data(), g.data(), m, k, n, dw.data_mut());
                    });
                }
                Op::AddBias { x, b } => {
                    let n = nodes[b.0].value.shape()[0];
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        for (o, &gv) in dx.data_mut().iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    });
                    Self::accumulate(&mut slots, nodes, *b, |db| {
                        let db = db.data_mut();
                        for row in g.data().chunks(n) {
                            for (o, &gv) in db.iter_mut().zip(row) {
                                *o += gv;
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    for input in [a, b] {
                        Self::accumulate(&mut slots, nodes, *input, |d| {
                            for (o, &gv) in d.data_mut().iter_mut().zip(g.data()) {
                                *o += gv;
                            }
                        });
                    }
                }
                Op::Scale { x, factor } => {
                    let factor = *factor;
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        for (o, &gv) in dx.data_mut().iter_mut().zip(g.data()) {
                            *o += gv * factor;
                        }
                    });
                }
                Op::Bmm { a, b } => {
                    let (ga, m, k) = nodes[a.0].value.dims3();
                    let n = nodes[b.0].value.dims3().2;
                    Self::accumulate(&mut slots, nodes, *a, |da| {
                        let da = da.data_mut();
                        for gi in 0..ga {
                            mm_bt_acc(
                                &g.data()[gi * m * n..(gi + 1) * m * n],
                                &nodes[b.0].value.data()[gi * k * n..(gi + 1) * k * n],
                                m,
                                n,
                                k,
                                &mut da[gi * m * k..(gi + 1) * m * k],
                            );
                        }
                    });
                    Self::accumulate(&mut slots, nodes, *b, |db| {
                        let db = db.data_mut();
                        for gi in 0..ga {
                            mm_at_acc(
                                &nodes[a.0].value.data()[gi * m * k..(gi + 1) * m * k],
                                &g.data()[gi * m * n..(gi + 1) * m * n],
                                m,
                                k,
                                n,
                                &mut db[gi * k * n..(gi + 1) * k * n],
                            );
                        }
                    });
                }
                Op::TransposeLast { x } => {
                    let (gr, m, n) = nodes[x.0].value.dims3();
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        let dx = dx.data_mut();
                        for gi in 0..gr {
                            for i in 0..m {
                                for j in 0..n {
                                    dx[gi * m * n + i * n + j] += g.data()[gi * n * m + j * m + i];
                                }
                            }
                        }
                    });
                }
                Op::SplitHeads { x, heads } => {
                    let (b, s, d) = nodes[x.0].value.dims3();
                    let hd = d / heads;
                    let heads = *heads;
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        let dx = dx.data_mut();
                        for bi in 0..b {
                            for h in 0..heads {
                                for si in 0..s {
                                    let from = (bi * heads + h) * s * hd + si * hd;
                                    let to = bi * s * d + si * d + h * hd;
                                    for off in 0..hd {
                                        dx[to + off] += g.data()[from + off];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::MergeHeads { x, heads } => {
                    let (gh, s, hd) = nodes[x.0].value.dims3();
                    let heads = *heads;
                    let b = gh / heads;
                    let d = heads * hd;
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        let dx = dx.data_mut();
                        for bi in 0..b {
                            for h in 0..heads {
                                for si in 0..s {
                                    let from = bi * s * d + si * d + h * hd;
                                    let to = (bi * heads + h) * s * hd + si * hd;
                                    for off in 0..hd {
                                        dx[to + off] += g.data()[from + off];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Softmax { x, mask } => {
                    let (gr, q_len, k_len) = nodes[x.0].value.dims3();
                    let y = &node.value;
                    let _ = mask; // masked outputs are exactly 0 ⇒ dx is 0 there
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        let dx = dx.data_mut();
                        for r in 0..gr * q_len {
                            let y_row = &y.data()[r * k_len..(r + 1) * k_len];
                            let g_row = &g.data()[r * k_len..(r + 1) * k_len];
                            let mut dot = T::ZERO;
                            for (&yv, &gv) in y_row.iter().zip(g_row) {
                                dot += yv * gv;
                            }
                            let dx_row = &mut dx[r * k_len..(r + 1) * k_len];
                            for ((o, &yv), &gv) in dx_row.iter_mut().zip(y_row).zip(g_row) {
                                *o += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::Relu { x } => {
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        for ((o, &gv), &xv) in
                            dx.data_mut().iter_mut().zip(g.data()).zip(nodes[x.0].value.data())
                        {
                            if xv > T::ZERO {
                                *o += gv;
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, mean, inv_std } => {
                    let (gr, s, d) = nodes[x.0].value.dims3();
                    let rows = gr * s;
                    let gain_d = nodes[gain.0].value.data();
                    let x_d = nodes[x.0].value.data();
                    Self::accumulate(&mut slots, nodes, *gain, |dg| {
                        let dg = dg.data_mut();
                        for r in 0..rows {
                            let (mu, inv) = (mean[r], inv_std[r]);
                            for i in 0..d {
                                let xhat = (x_d[r * d + i] - mu) * inv;
                                dg[i] += g.data()[r * d + i] * xhat;
                            }
                        }
                    });
                    Self::accumulate(&mut slots, nodes, *bias, |db| {
                        let db = db.data_mut();
                        for row in g.data().chunks(d) {
                            for (o, &gv) in db.iter_mut().zip(row) {
                                *o += gv;
                            }
                        }
                    });
                    Self::accumulate(&mut slots, nodes, *x, |dx| {
                        let dx = dx.data_mut();
                        let inv_d = T::ONE / T::from_f64(d as f64);
                        for r in 0..rows {
                            let (mu, inv) = (mean[r], inv_std[r]);
                            let g_row = &g.data()[r * d..(r + 1) * d];
                            // a = upstream ⊙ gain; dx = inv·(a − mean(a) − x̂·mean(a ⊙ x̂))
                            let mut sum_a = T::ZERO;
                            let mut sum_ax = T::ZERO;
                            for i in 0..d {
                                let a = g_row[i] * gain_d[i];
                                let xhat = (x_d[r * d + i] - mu) * inv;
                                sum_a += a;
                                sum_ax += a * xhat;
                            }
                            let mean_a = sum_a * inv_d;
                            let mean_ax = sum_ax * inv_d;
                            let dx_row = &mut dx[r * d..(r + 1) * d];
                            for i in 0..d {
                                let a = g_row[i] * gain_d[i];
                                let xhat = (x_d[r * d + i] - mu) * inv;
                                dx_row[i] += inv * (a - mean_a - xhat * mean_ax);
                            }
                        }
                    });
                }
                Op::CrossEntropy { logits, targets, pad, probs, count } => {
                    let v = nodes[logits.0].value.dims3().2;
                    let seed = g.item() / T::from_f64(*count as f64);
                    Self::accumulate(&mut slots, nodes, *logits, |dl| {
                        let dl = dl.data_mut();
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *pad {
                                continue;
                            }
                            let p_row = &probs[r * v..(r + 1) * v];
                            let d_row = &mut dl[r * v..(r + 1) * v];
                            for (i, (o, &p)) in d_row.iter_mut().zip(p_row).enumerate() {
                                let indicator = if i == t { T::ONE } else { T::ZERO };
                                *o += seed * (p - indicator);
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { slots })
    }

    /// Gradients of every param node, as `(store index, gradient)` pairs.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<(usize, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(index) = node.op {
                if let Some(g) = grads.take(NodeId(i)) {
                    out.push((index, g));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of `f` w.r.t. one input entry.
    fn fd<F: FnMut(&[f64]) -> f64>(mut f: F, xs: &[f64], i: usize, eps: f64) -> f64 {
        let mut plus = xs.to_vec();
        plus[i] += eps;
        let mut minus = xs.to_vec();
        minus[i] -= eps;
        (f(&plus) - f(&minus)) / (2.0 * eps)
    }

    #[test]
    fn matmul_forward_matches_hand_result() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = tape.constant(Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let y = tape.matmul(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[58., 64., 139., 154.]);
    }

    /// Builds a graph exercising most ops from a flat parameter vector and
    /// returns the scalar loss. Layout: embed table [4,6] (24), dense w
    /// [6,6] (36), bias [6], ln gain [6], ln bias [6], out w [6,4] (24),
    /// out b [4] — 106 entries total.
    fn mixed_graph_loss(theta: &[f64]) -> (Tape<f64>, Vec<NodeId>, NodeId) {
        assert_eq!(theta.len(), 106);
        let mut off = 0;
        let mut next = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, theta[off..off + n].to_vec()).unwrap();
            off += n;
            t
        };
        let mut tape = Tape::<f64>::new();
        let table = tape.param(0, next(&[4, 6]));
        let w = tape.param(1, next(&[6, 6]));
        let b = tape.param(2, next(&[6]));
        let gain = tape.param(3, next(&[6]));
        let lbias = tape.param(4, next(&[6]));
        let out_w = tape.param(5, next(&[6, 4]));
        let out_b = tape.param(6, next(&[4]));
        let params = vec![table, w, b, gain, lbias, out_w, out_b];

        let ids = vec![vec![1, 2, 3], vec![3, 0, 2]];
        let e = tape.embed(table, &ids).unwrap();
        let e = tape.scale(e, 1.25);
        // Tiny self-attention: q = k = v = embedded input, 2 heads, causal.
        let q = tape.split_heads(e, 2).unwrap();
        let kt = tape.transpose_last(q).unwrap();
        let scores = tape.bmm(q, kt).unwrap();
        let scores = tape.scale(scores, 1.0 / (3.0f64).sqrt());
        let mask = AttnMask { heads: 2, causal: true, key_keep: Some(vec![true; 6]) };
        let probs = tape.softmax_rows(scores, Some(mask)).unwrap();
        let ctx = tape.bmm(probs, q).unwrap();
        let ctx = tape.merge_heads(ctx, 2).unwrap();
        let res = tape.add(e, ctx).unwrap();
        let h = tape.matmul(res, w).unwrap();
        let h = tape.add_bias(h, b).unwrap();
        let h = tape.relu(h);
        let h = tape.layer_norm(h, gain, lbias, 1e-5).unwrap();
        let logits = tape.matmul(h, out_w).unwrap();
        let logits = tape.add_bias(logits, out_b).unwrap();
        // Second row's middle target is pad (0) to exercise masking.
        let loss = tape.cross_entropy(logits, &[vec![2, 3, 1], vec![1, 0, 3]], 0).unwrap();
        (tape, params, loss)
    }

    #[test]
    fn backward_through_mixed_graph_matches_finite_differences() {
        // Deterministic pseudo-random parameters, kept away from ReLU kinks.
        let theta: Vec<f64> = (0..106)
            .map(|i| {
                let x = ((i * 2654435761_usize) % 1000) as f64 / 1000.0;
                0.9 * x - 0.45 + if x > 0.45 && x < 0.55 { 0.2 } else { 0.0 }
            })
            .collect();
        let (tape, params, loss) = mixed_graph_loss(&theta);
        let mut grads = tape.backward(loss).unwrap();
        let analytic: Vec<Vec<f64>> =
            params.iter().map(|&p| grads.take(p).expect("param grad").data().to_vec()).collect();

        let eval = |theta: &[f64]| -> f64 {
            let (tape, _, loss) = mixed_graph_loss(theta);
            tape.value(loss).item()
        };
        // Probe a spread of entries across every parameter.
        let offsets = [0usize, 24, 60, 66, 72, 78, 102];
        let sizes = [24usize, 36, 6, 6, 6, 24, 4];
        for (pi, (&base, &size)) in offsets.iter().zip(&sizes).enumerate() {
            for j in (0..size).step_by(3.min(size)) {
                let numeric = fd(eval, &theta, base + j, 1e-6);
                let a = analytic[pi][j];
                let denom = numeric.abs().max(1.0);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-7,
                    "param {pi} entry {j}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v() {
        let mut tape = Tape::<f64>::new();
        let v = 7;
        let logits = tape.constant(Tensor::new(&[1, 2, v], vec![0.0; 2 * v]).unwrap());
        let loss = tape.cross_entropy(logits, &[vec![3, 5]], 0).unwrap();
        assert!((tape.value(loss).item() - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_pad_and_rejects_all_pad() {
        let mut tape = Tape::<f64>::new();
        let mut data = vec![0.0; 2 * 3];
        data[0] = 5.0; // boost class 0 at position 0
        let logits = tape.param(0, Tensor::new(&[1, 2, 3], data).unwrap());
        // Second position is pad: loss only from the first.
        let loss = tape.cross_entropy(logits, &[vec![0, 0]], 0);
        assert!(matches!(loss, Err(NnError::EmptyTargets)));

        let loss = tape.cross_entropy(logits, &[vec![1, 0]], 0).unwrap();
        let expected = {
            let row: [f64; 3] = [5.0, 0.0, 0.0];
            let denom: f64 = row.iter().map(|x| x.exp()).sum();
            denom.ln() - row[1]
        };
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);

        // The pad position receives zero gradient.
        let mut grads = tape.backward(loss).unwrap();
        let dl = grads.take(logits).unwrap();
        assert!(dl.data()[3..].iter().all(|&g| g == 0.0));
        assert!(dl.data()[..3].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_future() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(
            Tensor::new(&[2, 3, 3], (0..18).map(|i| i as f64 * 0.37 - 2.0).collect()).unwrap(),
        );
        let mask = AttnMask { heads: 1, causal: true, key_keep: None };
        let y = tape.softmax_rows(x, Some(mask)).unwrap();
        let data = tape.value(y).data();
        for g in 0..2 {
            for q in 0..3 {
                let row = &data[(g * 3 + q) * 3..(g * 3 + q + 1) * 3];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
                for (k, &p) in row.iter().enumerate() {
                    if k > q {
                        assert_eq!(p, 0.0, "future position must be exactly zero");
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_key_padding_zeroes_padded_keys() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 2, 3], vec![0.5; 12]).unwrap());
        // batch = 1 item × 2 heads; last key padded out.
        let mask = AttnMask { heads: 2, causal: false, key_keep: Some(vec![true, true, false]) };
        let y = tape.softmax_rows(x, Some(mask)).unwrap();
        for row in tape.value(y).data().chunks(3) {
            assert_eq!(row[2], 0.0);
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut tape = Tape::<f64>::new();
        let d = 8;
        let x = tape.constant(
            Tensor::new(&[1, 2, d], (0..16).map(|i| (i as f64).sin() * 3.0 + 1.0).collect())
                .unwrap(),
        );
        let gain = tape.constant(Tensor::new(&[d], vec![1.0; d]).unwrap());
        let bias = tape.constant(Tensor::new(&[d], vec![0.0; d]).unwrap());
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        for row in tape.value(y).data().chunks(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }

        // Constant rows collapse to the affine bias.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 4], vec![5.0; 4]).unwrap());
        let gain = tape.constant(Tensor::new(&[4], vec![2.0; 4]).unwrap());
        let bias = tape.constant(Tensor::new(&[4], vec![0.25; 4]).unwrap());
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn split_merge_heads_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x =
            tape.constant(Tensor::new(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap());
        let split = tape.split_heads(x, 2).unwrap();
        assert_eq!(tape.value(split).shape(), &[4, 3, 2]);
        let merged = tape.merge_heads(split, 2).unwrap();
        assert_eq!(tape.value(merged), tape.value(x));
    }

    #[test]
    fn embed_looks_up_rows_and_validates_ids() {
        let mut tape = Tape::<f64>::new();
        let table =
            tape.param(0, Tensor::new(&[3, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1]).unwrap());
        let e = tape.embed(table, &[vec![2, 0], vec![1, 1]]).unwrap();
        assert_eq!(tape.value(e).data(), &[2.0, 2.1, 0.0, 0.1, 1.0, 1.1, 1.0, 1.1]);
        assert!(matches!(
            tape.embed(table, &[vec![3]]),
            Err(NnError::TokenOutOfRange { id: 3, .. })
        ));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 3]));
        let b = tape.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(tape.add(a, b).is_err());
        let w = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(tape.matmul(a, w).is_err());
        let bias = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add_bias(a, bias).is_err());
        assert!(tape.split_heads(a, 2).is_err(), "3 features not divisible by 2 heads");
        let loss_like = tape.constant(Tensor::zeros(&[1, 1, 1]));
        assert!(matches!(tape.backward(loss_like), Err(NnError::NonScalarLoss(_))));
    }
}
