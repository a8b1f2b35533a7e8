//! Genome → runnable encoder-decoder transformer.
//!
//! [`build_plan`] expands a genome's block types into concrete layer lists;
//! [`Model::init`] allocates deterministically initialized parameters for a
//! plan; [`Model::forward`] assembles the full dataflow on a [`Tape`],
//! honoring per-decoder-block cross-attention wiring: every encoder block's
//! output is retained, and each decoder cross-attention layer reads
//! key/value from the retained output of its wired encoder block.
//!
//! Layer primitives ([`multihead_attention`], [`feed_forward`],
//! [`layer_norm`], [`embed`], [`positional_encode`], [`output_logits`],
//! [`cross_entropy`]) are free functions over a tape so they can be tested
//! and gradient-checked in isolation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{AttnMask, NodeId, Tape};
use super::tensor::{Element, Tensor};
use super::NnError;
use crate::data::PAD_ID;
use crate::genome::{decoder_layout, encoder_layout, Genome, LayerKind, ModelGlobals};
use crate::rng::RngStream;

/// Epsilon inside layer-norm's variance square root.
pub const LN_EPS: f64 = 1e-5;

/// How positions are encoded. Only the fixed sinusoidal scheme exists; the
/// enum keeps the choice explicit in the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalEncoding {
    Sinusoidal,
}

/// One concrete layer inside a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Head count for attention layers, hidden width for feed-forward.
    pub size: u32,
    /// 1-based encoder block supplying key/value; cross-attention only.
    pub cross_source: Option<usize>,
}

/// Fully expanded architecture: what [`Model::forward`] executes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlan {
    pub globals: ModelGlobals,
    pub encoder_blocks: Vec<Vec<LayerSpec>>,
    pub decoder_blocks: Vec<Vec<LayerSpec>>,
    pub positional: PositionalEncoding,
    /// Reserved knob; training at desk scale runs without dropout and the
    /// forward pass ignores this field.
    pub dropout: Option<f64>,
}

impl ModelPlan {
    pub fn encoder_count(&self) -> usize {
        self.encoder_blocks.len()
    }

    pub fn decoder_count(&self) -> usize {
        self.decoder_blocks.len()
    }
}

/// Expand a genome into per-layer specs, binding the k-th block parameter
/// to the k-th layer and copying cross wiring onto the cross-attention
/// layer of each decoder block.
pub fn build_plan(g: &Genome, globals: &ModelGlobals) -> Result<ModelPlan, NnError> {
    let d = globals.embed_dim;
    let check_heads = |heads: u32| -> Result<(), NnError> {
        if heads == 0 || !d.is_multiple_of(heads as usize) {
            return Err(NnError::HeadsDim { heads: heads as usize, dim: d });
        }
        Ok(())
    };
    let ne = g.encoders.len();

    let mut encoder_blocks = Vec::with_capacity(ne);
    for gene in &g.encoders {
        let layout = encoder_layout(gene.block_type)
            .map_err(|e| NnError::shape("build_plan", e.to_string()))?;
        let mut layers = Vec::with_capacity(layout.len());
        for (kind, &size) in layout.into_iter().zip(&gene.params) {
            if kind.is_attention() {
                check_heads(size)?;
            }
            layers.push(LayerSpec { kind, size, cross_source: None });
        }
        encoder_blocks.push(layers);
    }

    let mut decoder_blocks = Vec::with_capacity(g.decoders.len());
    for gene in &g.decoders {
        let layout = decoder_layout(gene.block_type)
            .map_err(|e| NnError::shape("build_plan", e.to_string()))?;
        let mut layers = Vec::with_capacity(layout.len());
        for (kind, &size) in layout.into_iter().zip(&gene.params) {
            let cross_source = if kind == LayerKind::CrossAttention {
                if gene.cross_source < 1 || gene.cross_source > ne {
                    return Err(NnError::shape(
                        "build_plan",
                        format!("cross source {} outside [1, {ne}]", gene.cross_source),
                    ));
                }
                Some(gene.cross_source)
            } else {
                None
            };
            if kind.is_attention() {
                check_heads(size)?;
            }
            layers.push(LayerSpec { kind, size, cross_source });
        }
        debug_assert_eq!(
            layers.iter().filter(|l| l.kind == LayerKind::CrossAttention).count(),
            1,
            "decoder block must contain exactly one cross-attention layer"
        );
        decoder_blocks.push(layers);
    }

    Ok(ModelPlan {
        globals: *globals,
        encoder_blocks,
        decoder_blocks,
        positional: PositionalEncoding::Sinusoidal,
        dropout: None,
    })
}

/// Named parameter tensors in a fixed order; the order defines both the
/// initialization draw sequence and the layout of the serialized blob.
pub struct ParamStore<T: Element> {
    entries: Vec<(String, Tensor<T>)>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BlobManifest {
    dtype: String,
    entries: Vec<BlobEntry>,
}

fn dtype_name<T: Element>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl<T: Element> ParamStore<T> {
    fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameters across all entries.
    pub fn scalar_count(&self) -> u64 {
        self.entries.iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Writes a one-line JSON manifest (names, shapes, dtype) followed by
    /// every tensor's values as little-endian f64, in entry order.
    pub fn save_blob(&self, path: &Path) -> Result<(), NnError> {
        let io_err = |source| NnError::Io { path: path.display().to_string(), source };
        let manifest = BlobManifest {
            dtype: dtype_name::<T>().to_string(),
            entries: self
                .entries
                .iter()
                .map(|(n, t)| BlobEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        serde_json::to_writer(&mut w, &manifest)
            .map_err(|e| NnError::CorruptBlob(format!("manifest encode: {e}")))?;
        w.write_all(b"\n").map_err(io_err)?;
        for (_, t) in &self.entries {
            for &v in t.data() {
                w.write_all(&v.to_f64().to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load_blob(path: &Path) -> Result<Self, NnError> {
        let io_err = |source| NnError::Io { path: path.display().to_string(), source };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let mut line = String::new();
        r.read_line(&mut line).map_err(io_err)?;
        let manifest: BlobManifest = serde_json::from_str(line.trim_end())
            .map_err(|e| NnError::CorruptBlob(format!("manifest decode: {e}")))?;
        if manifest.dtype != dtype_name::<T>() {
            return Err(NnError::CorruptBlob(format!(
                "dtype {} does not match requested {}",
                manifest.dtype,
                dtype_name::<T>()
            )));
        }
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for e in manifest.entries {
            let numel: usize = e.shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)
                    .map_err(|_| NnError::CorruptBlob("blob shorter than manifest".into()))?;
                data.push(T::from_f64(f64::from_le_bytes(buf)));
            }
            let tensor =
                Tensor::new(&e.shape, data).map_err(|err| NnError::CorruptBlob(err.to_string()))?;
            entries.push((e.name, tensor));
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(io_err)? != 0 {
            return Err(NnError::CorruptBlob("trailing bytes after last tensor".into()));
        }
        Ok(ParamStore { entries })
    }
}

/// Node handles for one attention layer's projections.
pub struct AttentionParams {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

/// Node handles for one feed-forward layer.
pub struct FeedForwardParams {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Node handles for one layer-norm affine.
pub struct NormParams {
    pub gain: NodeId,
    pub bias: NodeId,
}

/// Scaled dot-product multihead attention. Self-attention when
/// `q_input == kv_input`; `causal` forbids attending to later positions;
/// `key_keep` (flattened `[batch][kv_len]`) drops padding keys.
pub fn multihead_attention<T: Element>(
    tape: &mut Tape<T>,
    q_input: NodeId,
    kv_input: NodeId,
    heads: usize,
    causal: bool,
    key_keep: Option<&[bool]>,
    params: &AttentionParams,
) -> Result<NodeId, NnError> {
    let d = match tape.value(q_input).shape() {
        &[_, _, d] => d,
        sh => return Err(NnError::shape("attention", format!("rank 3 required, got {sh:?}"))),
    };
    if heads == 0 || d % heads != 0 {
        return Err(NnError::HeadsDim { heads, dim: d });
    }
    let head_dim = d / heads;

    let q = tape.matmul(q_input, params.wq)?;
    let q = tape.add_bias(q, params.bq)?;
    let k = tape.matmul(kv_input, params.wk)?;
    let k = tape.add_bias(k, params.bk)?;
    let v = tape.matmul(kv_input, params.wv)?;
    let v = tape.add_bias(v, params.bv)?;

    let qh = tape.split_heads(q, heads)?;
    let kh = tape.split_heads(k, heads)?;
    let vh = tape.split_heads(v, heads)?;
    let kt = tape.transpose_last(kh)?;
    let scores = tape.bmm(qh, kt)?;
    let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
    let mask = AttnMask { heads, causal, key_keep: key_keep.map(<[bool]>::to_vec) };
    let probs = tape.softmax_rows(scores, Some(mask))?;
    let ctx = tape.bmm(probs, vh)?;
    let merged = tape.merge_heads(ctx, heads)?;
    let out = tape.matmul(merged, params.wo)?;
    tape.add_bias(out, params.bo)
}

/// Two-layer position-wise feed-forward with ReLU.
pub fn feed_forward<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    params: &FeedForwardParams,
) -> Result<NodeId, NnError> {
    let h = tape.matmul(x, params.w1)?;
    let h = tape.add_bias(h, params.b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, params.w2)?;
    tape.add_bias(h, params.b2)
}

/// Layer norm with the standard epsilon.
pub fn layer_norm<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    params: &NormParams,
) -> Result<NodeId, NnError> {
    tape.layer_norm(x, params.gain, params.bias, LN_EPS)
}

/// Token embedding lookup.
pub fn embed<T: Element>(
    tape: &mut Tape<T>,
    table: NodeId,
    ids: &[Vec<usize>],
) -> Result<NodeId, NnError> {
    tape.embed(table, ids)
}

/// The fixed sinusoidal position table for `seq_len` positions.
fn positional_table<T: Element>(batch: usize, seq_len: usize, dim: usize) -> Tensor<T> {
    let mut row = vec![0.0f64; seq_len * dim];
    for pos in 0..seq_len {
        for i in 0..dim {
            let exponent = 2.0 * (i / 2) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            row[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    let mut data = Vec::with_capacity(batch * seq_len * dim);
    for _ in 0..batch {
        data.extend(row.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(&[batch, seq_len, dim], data).expect("constructed shape")
}

/// Adds the sinusoidal position encoding to `[batch, seq, dim]` activations.
pub fn positional_encode<T: Element>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId, NnError> {
    let (b, s, d) = match tape.value(x).shape() {
        &[b, s, d] => (b, s, d),
        sh => {
            return Err(NnError::shape("positional_encode", format!("rank 3 required, got {sh:?}")))
        }
    };
    let table = tape.constant(positional_table(b, s, d));
    tape.add(x, table)
}

/// Final projection to target-vocabulary logits.
pub fn output_logits<T: Element>(
    tape: &mut Tape<T>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, NnError> {
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

/// Mean cross-entropy over non-pad targets.
pub fn cross_entropy<T: Element>(
    tape: &mut Tape<T>,
    logits: NodeId,
    targets: &[Vec<usize>],
    pad: usize,
) -> Result<NodeId, NnError> {
    tape.cross_entropy(logits, targets, pad)
}

/// Zeroes one encoder block's output during [`Model::forward_probed`], for
/// testing which parts of the dataflow an encoder block feeds.
#[derive(Debug, Clone, Copy)]
pub struct BlockProbe {
    /// 1-based encoder block to silence.
    pub encoder_block: usize,
    pub scope: ProbeScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeScope {
    /// Zero the output everywhere: the sequential feed to the next encoder
    /// block and the retained view read by cross-attention.
    FullOutput,
    /// Zero only the retained cross-attention view; the sequential encoder
    /// stack sees the real output.
    CrossViewOnly,
}

/// Pads rows to a rectangle with the pad token, validating ids against the
/// vocabulary. Returns padded ids and flattened `[batch][max_len]` keep
/// flags (true = real token).
fn pad_rows(rows: &[Vec<u32>], vocab: usize) -> Result<(Vec<Vec<usize>>, Vec<bool>), NnError> {
    if rows.is_empty() || rows.iter().any(Vec::is_empty) {
        return Err(NnError::EmptyBatch);
    }
    let max_len = rows.iter().map(Vec::len).max().expect("non-empty");
    let mut ids = Vec::with_capacity(rows.len());
    let mut keep = Vec::with_capacity(rows.len() * max_len);
    for row in rows {
        let mut padded = Vec::with_capacity(max_len);
        for &tok in row {
            if tok as usize >= vocab {
                return Err(NnError::TokenOutOfRange { id: tok, vocab });
            }
            padded.push(tok as usize);
            keep.push(true);
        }
        while padded.len() < max_len {
            padded.push(PAD_ID as usize);
            keep.push(false);
        }
        ids.push(padded);
    }
    Ok((ids, keep))
}

/// Walks a [`ParamStore`] in entry order, pushing each tensor onto the tape
/// as it is consumed by the forward pass. The store order and the forward
/// consumption order are the same by construction; names are checked in
/// debug builds.
struct ParamCursor<'s, T: Element> {
    store: &'s ParamStore<T>,
    next: usize,
}

impl<'s, T: Element> ParamCursor<'s, T> {
    fn take(&mut self, tape: &mut Tape<T>, expected: &str) -> NodeId {
        let index = self.next;
        debug_assert_eq!(self.store.name(index), expected, "param store order drifted");
        self.next += 1;
        tape.param(index, self.store.tensor(index).clone())
    }

    fn attention(&mut self, tape: &mut Tape<T>, prefix: &str) -> AttentionParams {
        AttentionParams {
            wq: self.take(tape, &format!("{prefix}.wq")),
            bq: self.take(tape, &format!("{prefix}.bq")),
            wk: self.take(tape, &format!("{prefix}.wk")),
            bk: self.take(tape, &format!("{prefix}.bk")),
            wv: self.take(tape, &format!("{prefix}.wv")),
            bv: self.take(tape, &format!("{prefix}.bv")),
            wo: self.take(tape, &format!("{prefix}.wo")),
            bo: self.take(tape, &format!("{prefix}.bo")),
        }
    }

    fn feed_forward(&mut self, tape: &mut Tape<T>, prefix: &str) -> FeedForwardParams {
        FeedForwardParams {
            w1: self.take(tape, &format!("{prefix}.w1")),
            b1: self.take(tape, &format!("{prefix}.b1")),
            w2: self.take(tape, &format!("{prefix}.w2")),
            b2: self.take(tape, &format!("{prefix}.b2")),
        }
    }

    fn norm(&mut self, tape: &mut Tape<T>, prefix: &str) -> NormParams {
        NormParams {
            gain: self.take(tape, &format!("{prefix}.norm.gain")),
            bias: self.take(tape, &format!("{prefix}.norm.bias")),
        }
    }
}

/// A plan plus its parameters: the trainable unit.
pub struct Model<T: Element> {
    pub plan: ModelPlan,
    pub store: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// Deterministic initialization: matrices are Xavier-uniform
    /// (`limit = √(6/(fan_in+fan_out))`), biases zero, norm gains one. The
    /// draw order is the store entry order, so a (plan, seed) pair always
    /// yields identical parameters.
    pub fn init(plan: ModelPlan, seed: u64) -> Self {
        let mut rng = RngStream::seed_from_u64(seed);
        let d = plan.globals.embed_dim;
        let mut store = ParamStore { entries: Vec::new() };

        let matrix = |rng: &mut RngStream, rows: usize, cols: usize| -> Tensor<T> {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| T::from_f64((rng.unit_f64() * 2.0 - 1.0) * limit))
                .collect();
            Tensor::new(&[rows, cols], data).expect("constructed shape")
        };
        let zeros = |n: usize| Tensor::<T>::zeros(&[n]);
        let ones = |n: usize| Tensor::new(&[n], vec![T::ONE; n]).expect("constructed shape");

        store.push("src_embed", matrix(&mut rng, plan.globals.src_vocab, d));
        store.push("tgt_embed", matrix(&mut rng, plan.globals.tgt_vocab, d));

        let push_block = |store: &mut ParamStore<T>,
                          rng: &mut RngStream,
                          side: &str,
                          b: usize,
                          layers: &[LayerSpec]| {
            for (li, layer) in layers.iter().enumerate() {
                let prefix = format!("{side}{}.l{}", b + 1, li + 1);
                if layer.kind.is_attention() {
                    for w in ["wq", "wk", "wv", "wo"] {
                        store.push(format!("{prefix}.{w}"), matrix(rng, d, d));
                        store.push(format!("{prefix}.{}", w.replace('w', "b")), zeros(d));
                    }
                } else {
                    let h = layer.size as usize;
                    store.push(format!("{prefix}.w1"), matrix(rng, d, h));
                    store.push(format!("{prefix}.b1"), zeros(h));
                    store.push(format!("{prefix}.w2"), matrix(rng, h, d));
                    store.push(format!("{prefix}.b2"), zeros(d));
                }
                store.push(format!("{prefix}.norm.gain"), ones(d));
                store.push(format!("{prefix}.norm.bias"), zeros(d));
            }
        };
        for (b, layers) in plan.encoder_blocks.iter().enumerate() {
            push_block(&mut store, &mut rng, "enc", b, layers);
        }
        for (b, layers) in plan.decoder_blocks.iter().enumerate() {
            push_block(&mut store, &mut rng, "dec", b, layers);
        }

        store.push("out_proj.w", matrix(&mut rng, d, plan.globals.tgt_vocab));
        store.push("out_proj.b", zeros(plan.globals.tgt_vocab));

        Model { plan, store }
    }

    /// Encoder + decoder forward producing `[batch, tgt_len, tgt_vocab]`
    /// logits for right-padded batches.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        src: &[Vec<u32>],
        dec_in: &[Vec<u32>],
    ) -> Result<NodeId, NnError> {
        self.forward_inner(tape, src, dec_in, None)
    }

    /// Forward with one encoder block's output zeroed per `probe`.
    pub fn forward_probed(
        &self,
        tape: &mut Tape<T>,
        src: &[Vec<u32>],
        dec_in: &[Vec<u32>],
        probe: &BlockProbe,
    ) -> Result<NodeId, NnError> {
        if probe.encoder_block < 1 || probe.encoder_block > self.plan.encoder_count() {
            return Err(NnError::shape(
                "probe",
                format!(
                    "encoder block {} outside [1, {}]",
                    probe.encoder_block,
                    self.plan.encoder_count()
                ),
            ));
        }
        self.forward_inner(tape, src, dec_in, Some(probe))
    }

    fn forward_inner(
        &self,
        tape: &mut Tape<T>,
        src: &[Vec<u32>],
        dec_in: &[Vec<u32>],
        probe: Option<&BlockProbe>,
    ) -> Result<NodeId, NnError> {
        let d = self.plan.globals.embed_dim;
        let (src_ids, src_keep) = pad_rows(src, self.plan.globals.src_vocab)?;
        let (dec_ids, dec_keep) = pad_rows(dec_in, self.plan.globals.tgt_vocab)?;
        let mut cursor = ParamCursor { store: &self.store, next: 0 };

        // Source side: embed, scale by √d, add positions, run blocks.
        let src_table = cursor.take(tape, "src_embed");
        let tgt_table = cursor.take(tape, "tgt_embed");
        let mut x = tape.embed(src_table, &src_ids)?;
        x = tape.scale(x, (d as f64).sqrt());
        x = positional_encode(tape, x)?;

        let mut enc_views: Vec<NodeId> = Vec::with_capacity(self.plan.encoder_count());
        for (b, layers) in self.plan.encoder_blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                let prefix = format!("enc{}.l{}", b + 1, li + 1);
                let sub = match layer.kind {
                    LayerKind::SelfAttention => {
                        let p = cursor.attention(tape, &prefix);
                        multihead_attention(
                            tape,
                            x,
                            x,
                            layer.size as usize,
                            false,
                            Some(&src_keep),
                            &p,
                        )?
                    }
                    LayerKind::FeedForward => {
                        let p = cursor.feed_forward(tape, &prefix);
                        feed_forward(tape, x, &p)?
                    }
                    other => {
                        return Err(NnError::shape(
                            "forward",
                            format!("{other:?} cannot appear in an encoder block"),
                        ))
                    }
                };
                let norm = cursor.norm(tape, &prefix);
                let summed = tape.add(x, sub)?;
                x = layer_norm(tape, summed, &norm)?;
            }
            let mut view = x;
            if let Some(p) = probe {
                if p.encoder_block == b + 1 {
                    let zero = tape.constant(Tensor::zeros(tape.value(x).shape()));
                    view = zero;
                    if p.scope == ProbeScope::FullOutput {
                        x = zero;
                    }
                }
            }
            enc_views.push(view);
        }

        // Target side.
        let mut y = tape.embed(tgt_table, &dec_ids)?;
        y = tape.scale(y, (d as f64).sqrt());
        y = positional_encode(tape, y)?;

        for (b, layers) in self.plan.decoder_blocks.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                let prefix = format!("dec{}.l{}", b + 1, li + 1);
                let sub = match layer.kind {
                    LayerKind::MaskedSelfAttention => {
                        let p = cursor.attention(tape, &prefix);
                        multihead_attention(
                            tape,
                            y,
                            y,
                            layer.size as usize,
                            true,
                            Some(&dec_keep),
                            &p,
                        )?
                    }
                    LayerKind::CrossAttention => {
                        let source = layer.cross_source.expect("validated by build_plan");
                        let kv = enc_views[source - 1];
                        let p = cursor.attention(tape, &prefix);
                        multihead_attention(
                            tape,
                            y,
                            kv,
                            layer.size as usize,
                            false,
                            Some(&src_keep),
                            &p,
                        )?
                    }
                    LayerKind::FeedForward => {
                        let p = cursor.feed_forward(tape, &prefix);
                        feed_forward(tape, y, &p)?
                    }
                    other => {
                        return Err(NnError::shape(
                            "forward",
                            format!("{other:?} cannot appear in a decoder block"),
                        ))
                    }
                };
                let norm = cursor.norm(tape, &prefix);
                let summed = tape.add(y, sub)?;
                y = layer_norm(tape, summed, &norm)?;
            }
        }

        let w = cursor.take(tape, "out_proj.w");
        let b = cursor.take(tape, "out_proj.b");
        debug_assert_eq!(cursor.next, self.store.len(), "forward must consume every param");
        output_logits(tape, y, w, b)
    }

    /// Teacher-forced loss for target rows that include both sentence
    /// markers: decoder input is `row[..n−1]`, the prediction target is
    /// `row[1..]`, and pad positions are excluded from the mean.
    /// Returns `(loss, logits)` nodes.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        src: &[Vec<u32>],
        tgt: &[Vec<u32>],
    ) -> Result<(NodeId, NodeId), NnError> {
        if tgt.iter().any(|row| row.len() < 2) {
            return Err(NnError::EmptyTargets);
        }
        let dec_in: Vec<Vec<u32>> = tgt.iter().map(|row| row[..row.len() - 1].to_vec()).collect();
        let logits = self.forward(tape, src, &dec_in)?;
        let max_len = tape.value(logits).shape()[1];
        let targets: Vec<Vec<usize>> = tgt
            .iter()
            .map(|row| {
                let mut out: Vec<usize> = row[1..].iter().map(|&t| t as usize).collect();
                out.resize(max_len, PAD_ID as usize);
                out
            })
            .collect();
        let loss = tape.cross_entropy(logits, &targets, PAD_ID as usize)?;
        Ok((loss, logits))
    }
}
