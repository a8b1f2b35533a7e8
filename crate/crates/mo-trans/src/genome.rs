//! Architecture genome: validity rules, serialization, parameter counting,
//! and the search-space-size calculator.
//!
//! A genome describes a transformer encoder-decoder as a variable-length
//! list of typed blocks. Each encoder block expands to two parameterized
//! layers and each decoder block to three (always containing exactly one
//! cross-attention layer). Decoder blocks additionally carry `cross_source`,
//! the 1-based index of the encoder block whose output feeds their
//! cross-attention — the searchable "cross way". The last decoder block is
//! always wired to the last encoder block.
//!
//! The canonical interchange form is the flat integer sequence
//! `{ne, [te,p1,p2]×ne, nd, [td,p1,p2,p3,ce]×nd}`; a JSON mirror and a DOT
//! schematic renderer are provided for files and figures.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of parameterized layers in every encoder block.
pub const ENCODER_SLOTS: usize = 2;
/// Number of parameterized layers in every decoder block.
pub const DECODER_SLOTS: usize = 3;
/// Encoder block types are `1..=ENCODER_TYPE_COUNT`.
pub const ENCODER_TYPE_COUNT: u8 = 4;
/// Decoder block types are `1..=DECODER_TYPE_COUNT`.
pub const DECODER_TYPE_COUNT: u8 = 3;

/// The four layer kinds a block can contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Bidirectional self-attention (encoder only).
    SelfAttention,
    /// Causal self-attention (decoder only).
    MaskedSelfAttention,
    /// Decoder attention reading key/value from an encoder block's output.
    CrossAttention,
    /// Position-wise two-layer feed-forward network.
    FeedForward,
}

impl LayerKind {
    /// Attention layers are parameterized by head count, feed-forward layers
    /// by hidden dimension.
    pub fn is_attention(self) -> bool {
        !matches!(self, LayerKind::FeedForward)
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::SelfAttention => "SA",
            LayerKind::MaskedSelfAttention => "M-MHA",
            LayerKind::CrossAttention => "C-MHA",
            LayerKind::FeedForward => "FFN",
        }
    }
}

/// Layer composition of encoder block type `block_type`.
///
/// The candidate compositions: every encoder type holds exactly two
/// parameterized layers built from self-attention and feed-forward pieces.
pub fn encoder_layout(block_type: u8) -> Result<[LayerKind; ENCODER_SLOTS], GenomeError> {
    use LayerKind::{FeedForward as FF, SelfAttention as SA};
    match block_type {
        1 => Ok([SA, FF]),
        2 => Ok([FF, SA]),
        3 => Ok([SA, SA]),
        4 => Ok([FF, FF]),
        other => Err(GenomeError::UnknownBlockType { segment: "encoder", value: other as u32 }),
    }
}

/// Layer composition of decoder block type `block_type`. Every decoder type
/// holds exactly one cross-attention layer.
pub fn decoder_layout(block_type: u8) -> Result<[LayerKind; DECODER_SLOTS], GenomeError> {
    use LayerKind::{CrossAttention as CA, FeedForward as FF, MaskedSelfAttention as MA};
    match block_type {
        1 => Ok([MA, CA, FF]),
        2 => Ok([CA, MA, FF]),
        3 => Ok([MA, FF, CA]),
        other => Err(GenomeError::UnknownBlockType { segment: "decoder", value: other as u32 }),
    }
}

/// One encoder block gene: a type index plus one integer per layer slot
/// (head count for attention slots, hidden dimension for feed-forward slots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncoderGene {
    pub block_type: u8,
    pub params: [u32; ENCODER_SLOTS],
}

/// One decoder block gene; `cross_source` is the 1-based encoder block index
/// feeding this block's cross-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecoderGene {
    pub block_type: u8,
    pub params: [u32; DECODER_SLOTS],
    pub cross_source: usize,
}

/// A variable-length transformer architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GenomeWire", into = "GenomeWire")]
pub struct Genome {
    pub encoders: Vec<EncoderGene>,
    pub decoders: Vec<DecoderGene>,
}

impl Genome {
    pub fn encoder_count(&self) -> usize {
        self.encoders.len()
    }

    pub fn decoder_count(&self) -> usize {
        self.decoders.len()
    }

    /// Length of the flat integer encoding.
    pub fn flat_len(&self) -> usize {
        2 + ENCODER_SLOTS_PLUS_TYPE * self.encoders.len()
            + DECODER_SLOTS_PLUS_TYPE_CE * self.decoders.len()
    }
}

const ENCODER_SLOTS_PLUS_TYPE: usize = 1 + ENCODER_SLOTS;
const DECODER_SLOTS_PLUS_TYPE_CE: usize = 2 + DECODER_SLOTS;

/// JSON mirror of [`Genome`] with explicit counts, matching the flat
/// encoding's field names.
#[derive(Serialize, Deserialize)]
struct GenomeWire {
    ne: usize,
    encoders: Vec<EncoderWire>,
    nd: usize,
    decoders: Vec<DecoderWire>,
}

#[derive(Serialize, Deserialize)]
struct EncoderWire {
    te: u8,
    p1: u32,
    p2: u32,
}

#[derive(Serialize, Deserialize)]
struct DecoderWire {
    td: u8,
    p1: u32,
    p2: u32,
    p3: u32,
    ce: usize,
}

impl From<Genome> for GenomeWire {
    fn from(g: Genome) -> Self {
        GenomeWire {
            ne: g.encoders.len(),
            encoders: g
                .encoders
                .iter()
                .map(|e| EncoderWire { te: e.block_type, p1: e.params[0], p2: e.params[1] })
                .collect(),
            nd: g.decoders.len(),
            decoders: g
                .decoders
                .iter()
                .map(|d| DecoderWire {
                    td: d.block_type,
                    p1: d.params[0],
                    p2: d.params[1],
                    p3: d.params[2],
                    ce: d.cross_source,
                })
                .collect(),
        }
    }
}

impl TryFrom<GenomeWire> for Genome {
    type Error = GenomeError;

    fn try_from(w: GenomeWire) -> Result<Self, GenomeError> {
        if w.ne != w.encoders.len() {
            return Err(GenomeError::InconsistentCounts {
                field: "ne",
                declared: w.ne,
                actual: w.encoders.len(),
            });
        }
        if w.nd != w.decoders.len() {
            return Err(GenomeError::InconsistentCounts {
                field: "nd",
                declared: w.nd,
                actual: w.decoders.len(),
            });
        }
        Ok(Genome {
            encoders: w
                .encoders
                .iter()
                .map(|e| EncoderGene { block_type: e.te, params: [e.p1, e.p2] })
                .collect(),
            decoders: w
                .decoders
                .iter()
                .map(|d| DecoderGene {
                    block_type: d.td,
                    params: [d.p1, d.p2, d.p3],
                    cross_source: d.ce,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Error)]
pub enum GenomeError {
    #[error("unknown {segment} block type {value}")]
    UnknownBlockType { segment: &'static str, value: u32 },
    #[error("flat encoding has wrong length: expected {expected}, got {got}")]
    FlatLength { expected: usize, got: usize },
    #[error("flat encoding invalid at index {index}: {detail}")]
    FlatValue { index: usize, detail: String },
    #[error("invalid genome: {0}")]
    Invalid(String),
    #[error(
        "inconsistent genome JSON: {field} declares {declared} blocks but {actual} are listed"
    )]
    InconsistentCounts { field: &'static str, declared: usize, actual: usize },
    #[error("malformed genome JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Training hyperparameters used by the neural evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decode_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 10,
            patience: 2,
            // Small batches buy more optimizer steps inside the fixed
            // 10-epoch budget, which desk-scale models need to converge.
            batch_size: 16,
            learning_rate: 1e-3,
            decode_max_len: 24,
        }
    }
}

/// Search-space definition plus run hyperparameters.
///
/// Defaults follow the published setup: block counts in `[3,7]`, heads from
/// `{4,8}`, feed-forward dims from `{512,1024}`, crossover probability 0.92,
/// mutation probability 0.15, population and generations 15, embedding 512.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Inclusive `[min, max]` bounds on the number of encoder blocks.
    pub encoder_blocks: [usize; 2],
    /// Inclusive `[min, max]` bounds on the number of decoder blocks.
    pub decoder_blocks: [usize; 2],
    /// Head-count domain for attention layer slots.
    pub head_choices: Vec<u32>,
    /// Hidden-dimension domain for feed-forward layer slots.
    pub ffn_dim_choices: Vec<u32>,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Population size N (one subproblem per weight vector).
    pub population: usize,
    pub generations: usize,
    /// Neighborhood size T.
    pub neighborhood: usize,
    /// Weight of the perplexity objective: f2 = k × perplexity.
    pub objective_k: f64,
    pub embed_dim: usize,
    pub seed: u64,
    pub training: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            encoder_blocks: [3, 7],
            decoder_blocks: [3, 7],
            head_choices: vec![4, 8],
            ffn_dim_choices: vec![512, 1024],
            crossover_prob: 0.92,
            mutation_prob: 0.15,
            population: 15,
            generations: 15,
            neighborhood: 3,
            objective_k: 0.5,
            embed_dim: 512,
            seed: 0,
            training: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

impl SearchConfig {
    /// Parameter domain for a layer slot of the given kind.
    pub fn domain_for(&self, kind: LayerKind) -> &[u32] {
        if kind.is_attention() {
            &self.head_choices
        } else {
            &self.ffn_dim_choices
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        for (name, [lo, hi]) in
            [("encoder_blocks", self.encoder_blocks), ("decoder_blocks", self.decoder_blocks)]
        {
            if lo < 1 || lo > hi {
                problems.push(format!("{name} bounds [{lo}, {hi}] must satisfy 1 <= min <= max"));
            }
        }
        for (name, p) in
            [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)]
        {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.population < 2 {
            problems.push(format!("population {} must be at least 2", self.population));
        }
        if self.neighborhood < 1 || self.neighborhood > self.population {
            problems.push(format!(
                "neighborhood {} outside [1, population={}]",
                self.neighborhood, self.population
            ));
        }
        if self.head_choices.is_empty() {
            problems.push("head_choices is empty".into());
        }
        if self.ffn_dim_choices.is_empty() {
            problems.push("ffn_dim_choices is empty".into());
        }
        if self.embed_dim < 1 {
            problems.push("embed_dim must be at least 1".into());
        }
        for &h in &self.head_choices {
            if h == 0 || !self.embed_dim.is_multiple_of(h as usize) {
                problems
                    .push(format!("embed_dim {} not divisible by head count {h}", self.embed_dim));
            }
        }
        if self.ffn_dim_choices.contains(&0) {
            problems.push("ffn dims must be positive".into());
        }
        if !self.objective_k.is_finite() || self.objective_k < 0.0 {
            problems.push(format!("objective_k {} must be finite and >= 0", self.objective_k));
        }
        if self.training.max_epochs < 1 {
            problems.push("training.max_epochs must be at least 1".into());
        }
        if self.training.patience < 1 {
            problems.push("training.patience must be at least 1".into());
        }
        if self.training.batch_size < 1 {
            problems.push("training.batch_size must be at least 1".into());
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate > 0.0) {
            problems.push("training.learning_rate must be positive".into());
        }
        if self.training.decode_max_len < 1 {
            problems.push("training.decode_max_len must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(problems.join("; ")))
        }
    }
}

/// Structure-only violations: block types resolvable and wiring in range.
/// These are exactly the rules checkable without a [`SearchConfig`].
fn structural_violations(g: &Genome) -> Vec<String> {
    let mut out = Vec::new();
    if g.encoders.is_empty() {
        out.push("genome has no encoder blocks".to_string());
    }
    if g.decoders.is_empty() {
        out.push("genome has no decoder blocks".to_string());
    }
    for (i, enc) in g.encoders.iter().enumerate() {
        if encoder_layout(enc.block_type).is_err() {
            out.push(format!("encoder block {}: unknown type {}", i + 1, enc.block_type));
        }
    }
    let ne = g.encoders.len();
    for (i, dec) in g.decoders.iter().enumerate() {
        if decoder_layout(dec.block_type).is_err() {
            out.push(format!("decoder block {}: unknown type {}", i + 1, dec.block_type));
        }
        if dec.cross_source < 1 || dec.cross_source > ne {
            out.push(format!("decoder block {}: ce {} outside [1, {ne}]", i + 1, dec.cross_source));
        }
    }
    if let Some(last) = g.decoders.last() {
        if ne > 0 && last.cross_source != ne {
            out.push(format!(
                "last decoder not wired to last encoder (ce {}, ne {ne})",
                last.cross_source
            ));
        }
    }
    out
}

/// Every violated invariant of `g` under `cfg`; an empty list means valid.
pub fn validate(g: &Genome, cfg: &SearchConfig) -> Vec<String> {
    let mut out = structural_violations(g);
    let ne = g.encoders.len();
    let nd = g.decoders.len();
    let [ne_lo, ne_hi] = cfg.encoder_blocks;
    let [nd_lo, nd_hi] = cfg.decoder_blocks;
    if ne < ne_lo {
        out.push(format!("ne below lower bound ({ne} < {ne_lo})"));
    }
    if ne > ne_hi {
        out.push(format!("ne above upper bound ({ne} > {ne_hi})"));
    }
    if nd < nd_lo {
        out.push(format!("nd below lower bound ({nd} < {nd_lo})"));
    }
    if nd > nd_hi {
        out.push(format!("nd above upper bound ({nd} > {nd_hi})"));
    }
    for (i, enc) in g.encoders.iter().enumerate() {
        if let Ok(layout) = encoder_layout(enc.block_type) {
            for (k, kind) in layout.iter().enumerate() {
                let domain = cfg.domain_for(*kind);
                if !domain.contains(&enc.params[k]) {
                    out.push(format!(
                        "encoder block {} slot {}: {} parameter {} outside domain {:?}",
                        i + 1,
                        k + 1,
                        kind.label(),
                        enc.params[k],
                        domain
                    ));
                }
            }
        }
    }
    for (i, dec) in g.decoders.iter().enumerate() {
        if let Ok(layout) = decoder_layout(dec.block_type) {
            for (k, kind) in layout.iter().enumerate() {
                let domain = cfg.domain_for(*kind);
                if !domain.contains(&dec.params[k]) {
                    out.push(format!(
                        "decoder block {} slot {}: {} parameter {} outside domain {:?}",
                        i + 1,
                        k + 1,
                        kind.label(),
                        dec.params[k],
                        domain
                    ));
                }
            }
        }
    }
    out
}

/// Emit the flat integer encoding
/// `{ne, [te,p1,p2]×ne, nd, [td,p1,p2,p3,ce]×nd}`.
///
/// Rejects genomes that violate structural invariants (unknown block types,
/// wiring out of range); parameter-domain checks need a config and belong to
/// [`validate`].
pub fn encode_flat(g: &Genome) -> Result<Vec<u32>, GenomeError> {
    let problems = structural_violations(g);
    if !problems.is_empty() {
        return Err(GenomeError::Invalid(problems.join("; ")));
    }
    Ok(flat_unchecked(g))
}

fn flat_unchecked(g: &Genome) -> Vec<u32> {
    let mut out = Vec::with_capacity(g.flat_len());
    out.push(g.encoders.len() as u32);
    for enc in &g.encoders {
        out.push(enc.block_type as u32);
        out.extend_from_slice(&enc.params);
    }
    out.push(g.decoders.len() as u32);
    for dec in &g.decoders {
        out.push(dec.block_type as u32);
        out.extend_from_slice(&dec.params);
        out.push(dec.cross_source as u32);
    }
    out
}

/// Inverse of [`encode_flat`]. Enforces exact length, type and parameter
/// domains (against `cfg`), and the wiring rules. Block-count *bounds* are
/// deliberately not enforced here — they are config policy, checked by
/// [`validate`] — so flat forms written under one bound setting stay readable
/// under another.
pub fn decode_flat(xs: &[u32], cfg: &SearchConfig) -> Result<Genome, GenomeError> {
    let fail = |index: usize, detail: String| GenomeError::FlatValue { index, detail };
    if xs.is_empty() {
        return Err(GenomeError::FlatLength { expected: 2, got: 0 });
    }
    let ne = xs[0] as usize;
    if ne == 0 {
        return Err(fail(0, "encoder block count must be at least 1".into()));
    }
    let decoder_count_idx = 1 + ENCODER_SLOTS_PLUS_TYPE * ne;
    if xs.len() <= decoder_count_idx {
        return Err(GenomeError::FlatLength { expected: decoder_count_idx + 1, got: xs.len() });
    }
    let nd = xs[decoder_count_idx] as usize;
    if nd == 0 {
        return Err(fail(decoder_count_idx, "decoder block count must be at least 1".into()));
    }
    let expected = 2 + ENCODER_SLOTS_PLUS_TYPE * ne + DECODER_SLOTS_PLUS_TYPE_CE * nd;
    if xs.len() != expected {
        return Err(GenomeError::FlatLength { expected, got: xs.len() });
    }

    let check_param = |idx: usize, kind: LayerKind| -> Result<u32, GenomeError> {
        let v = xs[idx];
        let domain = cfg.domain_for(kind);
        if domain.contains(&v) {
            Ok(v)
        } else {
            Err(fail(idx, format!("{} parameter {v} outside domain {domain:?}", kind.label())))
        }
    };

    let mut encoders = Vec::with_capacity(ne);
    for b in 0..ne {
        let base = 1 + ENCODER_SLOTS_PLUS_TYPE * b;
        let te = u8::try_from(xs[base])
            .ok()
            .filter(|&t| (1..=ENCODER_TYPE_COUNT).contains(&t))
            .ok_or_else(|| fail(base, format!("unknown encoder block type {}", xs[base])))?;
        let layout = encoder_layout(te).expect("range-checked block type");
        let mut params = [0u32; ENCODER_SLOTS];
        for (k, kind) in layout.iter().enumerate() {
            params[k] = check_param(base + 1 + k, *kind)?;
        }
        encoders.push(EncoderGene { block_type: te, params });
    }

    let mut decoders = Vec::with_capacity(nd);
    for b in 0..nd {
        let base = decoder_count_idx + 1 + DECODER_SLOTS_PLUS_TYPE_CE * b;
        let td = u8::try_from(xs[base])
            .ok()
            .filter(|&t| (1..=DECODER_TYPE_COUNT).contains(&t))
            .ok_or_else(|| fail(base, format!("unknown decoder block type {}", xs[base])))?;
        let layout = decoder_layout(td).expect("range-checked block type");
        let mut params = [0u32; DECODER_SLOTS];
        for (k, kind) in layout.iter().enumerate() {
            params[k] = check_param(base + 1 + k, *kind)?;
        }
        let ce_idx = base + 1 + DECODER_SLOTS;
        let ce = xs[ce_idx] as usize;
        if ce < 1 || ce > ne {
            return Err(fail(ce_idx, format!("ce {ce} outside [1, {ne}]")));
        }
        if b == nd - 1 && ce != ne {
            return Err(fail(
                ce_idx,
                format!("last decoder not wired to last encoder (ce {ce}, ne {ne})"),
            ));
        }
        decoders.push(DecoderGene { block_type: td, params, cross_source: ce });
    }

    Ok(Genome { encoders, decoders })
}

/// Pretty-printed JSON mirror `{ne, encoders:[{te,p1,p2}], nd, decoders:[..]}`.
pub fn to_json(g: &Genome) -> String {
    serde_json::to_string_pretty(g).expect("genome JSON serialization cannot fail")
}

/// Parse the JSON mirror. Checks count consistency (`ne`/`nd` vs. list
/// lengths); full validity is [`validate`]'s job.
pub fn from_json(s: &str) -> Result<Genome, GenomeError> {
    Ok(serde_json::from_str(s)?)
}

/// Exact number of valid genomes with `ne` encoder and `nd` decoder blocks
/// under `cfg`'s parameter domains.
///
/// With `E` = Σ over encoder types of the product of per-slot domain sizes,
/// `C` = the same sum over decoder types, and `D = ne·C` (a non-last decoder
/// block combines its `C` parameter choices with `ne` wiring choices), the
/// count is `E^ne · D^(nd−1) · C`: the last decoder block's wiring is fixed.
pub fn search_space_size(ne: usize, nd: usize, cfg: &SearchConfig) -> BigUint {
    assert!(ne >= 1 && nd >= 1, "search_space_size requires ne, nd >= 1");
    let per_block = |layouts: &[&[LayerKind]]| -> BigUint {
        let mut total = BigUint::ZERO;
        for layout in layouts {
            let mut combos = BigUint::from(1u32);
            for kind in *layout {
                combos *= BigUint::from(cfg.domain_for(*kind).len());
            }
            total += combos;
        }
        total
    };
    let encoder_layouts: Vec<[LayerKind; ENCODER_SLOTS]> =
        (1..=ENCODER_TYPE_COUNT).map(|t| encoder_layout(t).unwrap()).collect();
    let decoder_layouts: Vec<[LayerKind; DECODER_SLOTS]> =
        (1..=DECODER_TYPE_COUNT).map(|t| decoder_layout(t).unwrap()).collect();
    let e = per_block(&encoder_layouts.iter().map(|l| l.as_slice()).collect::<Vec<_>>());
    let c = per_block(&decoder_layouts.iter().map(|l| l.as_slice()).collect::<Vec<_>>());
    let d = BigUint::from(ne) * &c;
    e.pow(ne as u32) * d.pow(nd as u32 - 1) * c
}

/// Scale parameters shared between parameter counting and model building.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelGlobals {
    pub embed_dim: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

/// Exact count of trainable scalars the model builder instantiates for `g`:
/// token embeddings, per-layer projections and biases, one layer norm per
/// layer, and the output projection. Wiring carries no weights, so the count
/// is invariant under `cross_source` changes.
pub fn param_count(g: &Genome, globals: &ModelGlobals) -> u64 {
    let d = globals.embed_dim as u64;
    let layer_cost = |kind: LayerKind, param: u32| -> u64 {
        let body = match kind {
            // q, k, v, output projections: four d×d matrices plus biases.
            k if k.is_attention() => 4 * d * d + 4 * d,
            _ => {
                let h = param as u64;
                d * h + h + h * d + d
            }
        };
        body + 2 * d // the layer's norm (gain + bias)
    };
    let mut total = (globals.src_vocab as u64 + globals.tgt_vocab as u64) * d;
    for enc in &g.encoders {
        let layout = encoder_layout(enc.block_type).expect("valid genome");
        for (k, kind) in layout.iter().enumerate() {
            total += layer_cost(*kind, enc.params[k]);
        }
    }
    for dec in &g.decoders {
        let layout = decoder_layout(dec.block_type).expect("valid genome");
        for (k, kind) in layout.iter().enumerate() {
            total += layer_cost(*kind, dec.params[k]);
        }
    }
    total + d * globals.tgt_vocab as u64 + globals.tgt_vocab as u64
}

/// Render the genome as a DOT digraph: one node per layer (annotated with its
/// heads or hidden dim), solid edges for the sequential flow, and one dashed
/// edge per decoder block from its wired encoder block's output into the
/// cross-attention layer.
pub fn render_dot(g: &Genome) -> String {
    let mut out = String::new();
    out.push_str("digraph genome {\n");
    out.push_str("  rankdir=BT;\n");
    out.push_str("  node [shape=box];\n");
    out.push_str("  src [label=\"source embedding + positional encoding\", shape=oval];\n");
    out.push_str("  tgt [label=\"target embedding + positional encoding\", shape=oval];\n");
    out.push_str("  out [label=\"output projection\", shape=oval];\n");

    let slot_label = |kind: LayerKind, param: u32| -> String {
        if kind.is_attention() {
            format!("{} h={param}", kind.label())
        } else {
            format!("{} d={param}", kind.label())
        }
    };

    for (i, enc) in g.encoders.iter().enumerate() {
        let layout = encoder_layout(enc.block_type).expect("valid genome");
        out.push_str(&format!(
            "  subgraph cluster_e{} {{\n    label=\"encoder block {} (type {})\";\n",
            i + 1,
            i + 1,
            enc.block_type
        ));
        for (k, kind) in layout.iter().enumerate() {
            out.push_str(&format!(
                "    e{}_l{} [label=\"{}\"];\n",
                i + 1,
                k + 1,
                slot_label(*kind, enc.params[k])
            ));
        }
        out.push_str("  }\n");
    }
    for (i, dec) in g.decoders.iter().enumerate() {
        let layout = decoder_layout(dec.block_type).expect("valid genome");
        out.push_str(&format!(
            "  subgraph cluster_d{} {{\n    label=\"decoder block {} (type {})\";\n",
            i + 1,
            i + 1,
            dec.block_type
        ));
        for (k, kind) in layout.iter().enumerate() {
            out.push_str(&format!(
                "    d{}_l{} [label=\"{}\"];\n",
                i + 1,
                k + 1,
                slot_label(*kind, dec.params[k])
            ));
        }
        out.push_str("  }\n");
    }

    // Sequential flow through the encoder stack.
    out.push_str("  src -> e1_l1;\n");
    for i in 1..=g.encoders.len() {
        if i > 1 {
            out.push_str(&format!("  e{}_l{} -> e{}_l1;\n", i - 1, ENCODER_SLOTS, i));
        }
        for k in 1..ENCODER_SLOTS {
            out.push_str(&format!("  e{i}_l{k} -> e{i}_l{};\n", k + 1));
        }
    }
    // Sequential flow through the decoder stack.
    out.push_str("  tgt -> d1_l1;\n");
    for i in 1..=g.decoders.len() {
        if i > 1 {
            out.push_str(&format!("  d{}_l{} -> d{}_l1;\n", i - 1, DECODER_SLOTS, i));
        }
        for k in 1..DECODER_SLOTS {
            out.push_str(&format!("  d{i}_l{k} -> d{i}_l{};\n", k + 1));
        }
    }
    out.push_str(&format!("  d{}_l{} -> out;\n", g.decoders.len(), DECODER_SLOTS));
    // Cross edges: encoder block output (its last layer) into the C-MHA slot.
    for (i, dec) in g.decoders.iter().enumerate() {
        let layout = decoder_layout(dec.block_type).expect("valid genome");
        let slot = layout
            .iter()
            .position(|k| *k == LayerKind::CrossAttention)
            .expect("every decoder layout has a cross-attention layer");
        out.push_str(&format!(
            "  e{}_l{} -> d{}_l{} [style=dashed];\n",
            dec.cross_source,
            ENCODER_SLOTS,
            i + 1,
            slot + 1
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> SearchConfig {
        SearchConfig {
            encoder_blocks: [1, 7],
            decoder_blocks: [1, 7],
            head_choices: vec![4, 8],
            ffn_dim_choices: vec![512, 1024],
            ..SearchConfig::default()
        }
    }

    /// A 2-encoder/2-decoder genome used across tests.
    fn small_genome() -> Genome {
        Genome {
            encoders: vec![
                EncoderGene { block_type: 1, params: [4, 512] },
                EncoderGene { block_type: 3, params: [8, 4] },
            ],
            decoders: vec![
                DecoderGene { block_type: 2, params: [4, 8, 1024], cross_source: 1 },
                DecoderGene { block_type: 1, params: [8, 4, 512], cross_source: 2 },
            ],
        }
    }

    #[test]
    fn layouts_have_expected_kinds() {
        use LayerKind::*;
        assert_eq!(encoder_layout(1).unwrap(), [SelfAttention, FeedForward]);
        assert_eq!(encoder_layout(4).unwrap(), [FeedForward, FeedForward]);
        assert_eq!(decoder_layout(1).unwrap(), [MaskedSelfAttention, CrossAttention, FeedForward]);
        assert!(encoder_layout(0).is_err());
        assert!(encoder_layout(5).is_err());
        assert!(decoder_layout(4).is_err());
        // Every decoder layout contains exactly one cross-attention layer.
        for t in 1..=DECODER_TYPE_COUNT {
            let n = decoder_layout(t)
                .unwrap()
                .iter()
                .filter(|k| **k == LayerKind::CrossAttention)
                .count();
            assert_eq!(n, 1, "decoder type {t}");
        }
    }

    #[test]
    fn flat_round_trip() {
        let cfg = desk_config();
        let g = small_genome();
        let flat = encode_flat(&g).unwrap();
        assert_eq!(flat.len(), 2 + 3 * 2 + 5 * 2);
        assert_eq!(flat[0], 2);
        assert_eq!(flat[7], 2); // nd sits after the encoder section
        assert_eq!(decode_flat(&flat, &cfg).unwrap(), g);
    }

    #[test]
    fn flat_length_formula_minimal() {
        let g = Genome {
            encoders: vec![EncoderGene { block_type: 1, params: [8, 512] }],
            decoders: vec![DecoderGene { block_type: 1, params: [8, 8, 512], cross_source: 1 }],
        };
        assert_eq!(encode_flat(&g).unwrap().len(), 10);
    }

    #[test]
    fn decode_rejects_malformed_input() {
        let cfg = desk_config();
        let g = small_genome();
        let flat = encode_flat(&g).unwrap();

        // Truncation and padding.
        assert!(matches!(
            decode_flat(&flat[..flat.len() - 1], &cfg),
            Err(GenomeError::FlatLength { .. })
        ));
        let mut longer = flat.clone();
        longer.push(1);
        assert!(matches!(decode_flat(&longer, &cfg), Err(GenomeError::FlatLength { .. })));

        // Out-of-range decoder type.
        let mut bad_type = flat.clone();
        bad_type[8] = 5;
        let err = decode_flat(&bad_type, &cfg).unwrap_err();
        assert!(err.to_string().contains("unknown decoder block type 5"), "{err}");

        // Attention slot carrying a value outside the head domain.
        let mut bad_param = flat.clone();
        bad_param[2] = 7;
        assert!(decode_flat(&bad_param, &cfg).is_err());

        // Last decoder must point at the last encoder.
        let mut bad_wiring = flat;
        *bad_wiring.last_mut().unwrap() = 1;
        let err = decode_flat(&bad_wiring, &cfg).unwrap_err();
        assert!(err.to_string().contains("last decoder"), "{err}");
    }

    #[test]
    fn validate_flags_expected_violations() {
        let cfg = SearchConfig::default(); // bounds [3,7]
        let mut g = small_genome(); // ne = nd = 2
        let problems = validate(&g, &cfg);
        assert!(problems.iter().any(|p| p.contains("ne below lower bound")), "{problems:?}");
        assert!(problems.iter().any(|p| p.contains("nd below lower bound")), "{problems:?}");

        g.decoders[1].cross_source = 1;
        let problems = validate(&g, &cfg);
        assert!(
            problems.iter().any(|p| p.contains("last decoder not wired to last encoder")),
            "{problems:?}"
        );

        // A fully valid genome produces no violations.
        let ok = Genome {
            encoders: vec![EncoderGene { block_type: 2, params: [1024, 8] }; 3],
            decoders: vec![DecoderGene { block_type: 3, params: [4, 512, 8], cross_source: 3 }; 3],
        };
        assert!(validate(&ok, &cfg).is_empty());
    }

    #[test]
    fn encode_rejects_structurally_broken_genome() {
        let mut g = small_genome();
        g.decoders[0].cross_source = 9;
        assert!(encode_flat(&g).is_err());
    }

    #[test]
    fn json_round_trip_and_count_check() {
        let g = small_genome();
        let json = to_json(&g);
        assert_eq!(from_json(&json).unwrap(), g);
        // The mirror spells out counts and the compact wire field names.
        assert!(json.contains("\"ne\": 2"));
        assert!(json.contains("\"te\""));
        assert!(json.contains("\"ce\""));

        let tampered = json.replace("\"ne\": 2", "\"ne\": 3");
        let err = from_json(&tampered).unwrap_err();
        assert!(err.to_string().contains("ne"), "{err}");

        assert!(from_json("not json").is_err());
    }

    #[test]
    fn search_space_matches_published_count() {
        let cfg = SearchConfig::default();
        let size = search_space_size(6, 6, &cfg);
        let expected =
            BigUint::from(16u32).pow(6) * BigUint::from(144u32).pow(5) * BigUint::from(24u32);
        assert_eq!(size, expected);
        // Rounds to 2.5×10^19.
        let approx = size.to_string().parse::<f64>().unwrap();
        assert!((2.45e19..2.55e19).contains(&approx), "{approx}");
    }

    #[test]
    fn search_space_degenerate_domains() {
        let cfg = SearchConfig {
            head_choices: vec![4],
            ffn_dim_choices: vec![512],
            ..SearchConfig::default()
        };
        // E = 4 block types × 1 combo each; C = 3; single decoder is the last.
        assert_eq!(search_space_size(1, 1, &cfg), BigUint::from(12u32));
        // Two decoders: the first has 1 wiring choice (ne = 1) and 3 types.
        assert_eq!(search_space_size(1, 2, &cfg), BigUint::from(4u32 * 3 * 3));
    }

    #[test]
    fn param_count_hand_case() {
        // d=16, vocabs 10/11, encoder [SA h=4, FFN h=8], decoder
        // [M-MHA, C-MHA, FFN h=8]: worked out by hand below.
        let g = Genome {
            encoders: vec![EncoderGene { block_type: 1, params: [4, 8] }],
            decoders: vec![DecoderGene { block_type: 1, params: [4, 4, 8], cross_source: 1 }],
        };
        let globals = ModelGlobals { embed_dim: 16, src_vocab: 10, tgt_vocab: 11 };
        // embeddings (10+11)·16 = 336
        // attention layer: 4·16² + 4·16 + 32 (norm) = 1120   (×3 layers)
        // ffn layer: 16·8 + 8 + 8·16 + 16 + 32 = 312          (×2 layers)
        // output projection: 16·11 + 11 = 187
        assert_eq!(param_count(&g, &globals), 336 + 3 * 1120 + 2 * 312 + 187);
    }

    #[test]
    fn param_count_ignores_wiring_and_grows_with_dims() {
        let globals = ModelGlobals { embed_dim: 32, src_vocab: 16, tgt_vocab: 16 };
        let mut a = small_genome();
        let base = param_count(&a, &globals);

        let mut rewired = a.clone();
        rewired.decoders[0].cross_source = 2;
        assert_eq!(param_count(&rewired, &globals), base);

        a.decoders[0].params[2] = 2048; // double the FFN hidden dim
        assert!(param_count(&a, &globals) > base);
    }

    #[test]
    fn dot_render_wires_cross_edges() {
        let g = small_genome();
        let dot = render_dot(&g);
        assert!(dot.starts_with("digraph genome {"));
        // One dashed cross edge per decoder block, into the C-MHA slot.
        assert!(dot.contains("e1_l2 -> d1_l1 [style=dashed];")); // type 2: C-MHA first
        assert!(dot.contains("e2_l2 -> d2_l2 [style=dashed];")); // type 1: C-MHA second
        assert_eq!(dot.matches("style=dashed").count(), g.decoder_count());
        // Layer annotations carry the searched parameters.
        assert!(dot.contains("SA h=4"));
        assert!(dot.contains("FFN d=512"));
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = SearchConfig { crossover_prob: 1.5, ..SearchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { neighborhood: 99, ..SearchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { head_choices: vec![3], ..SearchConfig::default() };
        assert!(bad.validate().is_err(), "512 is not divisible by 3");
        let bad = SearchConfig { encoder_blocks: [5, 3], ..SearchConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { objective_k: -1.0, ..SearchConfig::default() };
        assert!(bad.validate().is_err());
    }
}
