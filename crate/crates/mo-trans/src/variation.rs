//! Variation operators: population initialization, the distance-weighted
//! cross-attention wiring sampler, variable-length crossover, mutation, and
//! genome repair.
//!
//! The wiring sampler implements the "cross way" rule: a decoder block
//! prefers encoder blocks near its aligned position, with the selection
//! weight halving per step of distance. The last decoder block is always
//! wired to the last encoder block, and when the decoder stack is deeper
//! than the encoder stack, all extra decoder blocks are too.

use thiserror::Error;

use crate::genome::{
    decoder_layout, encoder_layout, DecoderGene, EncoderGene, Genome, SearchConfig,
    DECODER_TYPE_COUNT, ENCODER_TYPE_COUNT,
};
use crate::rng::RngStream;

/// Which stack a structural mutation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Encoder,
    Decoder,
}

/// The five mutation operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    AddBlock(Segment),
    DropBlock(Segment),
    AlterBlockType,
    AlterLayerParam,
    RewireCrossAttention,
}

#[derive(Debug, Error)]
pub enum VariationError {
    #[error("decoder position {position} outside [1, {nd}]")]
    PositionOutOfRange { position: usize, nd: usize },
    #[error("genome needs at least one encoder and one decoder block (ne={ne}, nd={nd})")]
    EmptySegment { ne: usize, nd: usize },
}

/// The encoder position "aligned" with decoder position `i` (all 1-based):
/// equal distance from the top when `ne ≥ nd`, equal distance from the
/// bottom when `ne < nd`. Clamped to `[1, ne]`; in the clamped region (extra
/// decoder blocks of a deeper decoder stack) it coincides with the forced
/// last-encoder wiring.
pub fn aligned_index(position: usize, ne: usize, nd: usize) -> usize {
    (position + ne.saturating_sub(nd)).min(ne)
}

/// Unnormalized wiring weights over encoder blocks `1..=ne` for decoder
/// position `i`: `2^(−|j − a(i)|)` scaled to integers, so ratio laws are
/// exact. Deterministic positions get a single non-zero weight.
pub fn ce_weights(position: usize, ne: usize, nd: usize) -> Result<Vec<u128>, VariationError> {
    if position < 1 || position > nd {
        return Err(VariationError::PositionOutOfRange { position, nd });
    }
    if ne < 1 {
        return Err(VariationError::EmptySegment { ne, nd });
    }
    assert!(ne <= 120, "wiring weights overflow u128 beyond 120 encoder blocks");
    let mut weights = vec![0u128; ne];
    if position == nd || (ne < nd && position >= ne) {
        weights[ne - 1] = 1;
        return Ok(weights);
    }
    let a = aligned_index(position, ne, nd);
    let max_dist = (a - 1).max(ne - a) as u32;
    for (j, w) in weights.iter_mut().enumerate() {
        let dist = (j + 1).abs_diff(a) as u32;
        *w = 1u128 << (max_dist - dist);
    }
    Ok(weights)
}

/// Normalized form of [`ce_weights`].
pub fn ce_distribution(position: usize, ne: usize, nd: usize) -> Result<Vec<f64>, VariationError> {
    let weights = ce_weights(position, ne, nd)?;
    let total: u128 = weights.iter().sum();
    Ok(weights.iter().map(|&w| w as f64 / total as f64).collect())
}

/// Sample the cross-attention source for decoder position `i` (1-based).
///
/// * `i = nd` → `ne`, deterministically (last decoder → last encoder).
/// * `ne < nd` and `ne ≤ i < nd` → `ne`, deterministically (extra decoder
///   blocks all read the last encoder block).
/// * otherwise → `j ∈ [1, ne]` with probability ∝ `2^(−|j − a(i)|)`.
pub fn sample_ce(
    position: usize,
    ne: usize,
    nd: usize,
    rng: &mut RngStream,
) -> Result<usize, VariationError> {
    let weights = ce_weights(position, ne, nd)?;
    let total: u128 = weights.iter().sum();
    let mut t = rng.below_u128(total);
    for (j, &w) in weights.iter().enumerate() {
        if t < w {
            return Ok(j + 1);
        }
        t -= w;
    }
    unreachable!("weights sum to total")
}

fn draw_encoder_gene(cfg: &SearchConfig, rng: &mut RngStream) -> EncoderGene {
    let block_type = 1 + rng.below(ENCODER_TYPE_COUNT as usize) as u8;
    let layout = encoder_layout(block_type).expect("drawn in range");
    let mut params = [0u32; 2];
    for (k, kind) in layout.iter().enumerate() {
        params[k] = *rng.pick(cfg.domain_for(*kind));
    }
    EncoderGene { block_type, params }
}

/// Draws type and layer parameters; wiring is the caller's business, since
/// it depends on the block's final position.
fn draw_decoder_gene(cfg: &SearchConfig, rng: &mut RngStream) -> (u8, [u32; 3]) {
    let block_type = 1 + rng.below(DECODER_TYPE_COUNT as usize) as u8;
    let layout = decoder_layout(block_type).expect("drawn in range");
    let mut params = [0u32; 3];
    for (k, kind) in layout.iter().enumerate() {
        params[k] = *rng.pick(cfg.domain_for(*kind));
    }
    (block_type, params)
}

/// Uniform random genome: block counts uniform over the configured bounds,
/// types and layer parameters uniform over their domains, wiring via
/// [`sample_ce`]. Always valid under `cfg`.
pub fn init_genome(cfg: &SearchConfig, rng: &mut RngStream) -> Genome {
    let ne = rng.range_inclusive(cfg.encoder_blocks[0], cfg.encoder_blocks[1]);
    let nd = rng.range_inclusive(cfg.decoder_blocks[0], cfg.decoder_blocks[1]);
    let encoders = (0..ne).map(|_| draw_encoder_gene(cfg, rng)).collect();
    let decoders = (0..nd)
        .map(|i| {
            let (block_type, params) = draw_decoder_gene(cfg, rng);
            let cross_source =
                sample_ce(i + 1, ne, nd, rng).expect("positions are in range by construction");
            DecoderGene { block_type, params, cross_source }
        })
        .collect();
    Genome { encoders, decoders }
}

/// Positional whole-block crossover: encoder blocks pair by position from
/// the bottom up to the shorter stack's length and swap as whole units;
/// decoder blocks likewise. Each child keeps its parent's block counts and
/// the longer parent's extra blocks stay in place.
///
/// The swap itself is deterministic; the stream parameter keeps the operator
/// signatures uniform (the search loop spends its randomness on parent and
/// child choice).
pub fn crossover(a: &Genome, b: &Genome, _rng: &mut RngStream) -> (Genome, Genome) {
    let mut child_a = a.clone();
    let mut child_b = b.clone();
    for i in 0..a.encoders.len().min(b.encoders.len()) {
        std::mem::swap(&mut child_a.encoders[i], &mut child_b.encoders[i]);
    }
    for i in 0..a.decoders.len().min(b.decoders.len()) {
        std::mem::swap(&mut child_a.decoders[i], &mut child_b.decoders[i]);
    }
    (child_a, child_b)
}

/// The mutation kinds applicable to `g` under `cfg`'s bounds, in a fixed
/// order: Add is blocked at the upper bound, Drop at the lower bound, and
/// rewiring needs a non-last decoder block to act on.
fn applicable_mutations(g: &Genome, cfg: &SearchConfig) -> Vec<MutationKind> {
    use MutationKind::*;
    let (ne, nd) = (g.encoders.len(), g.decoders.len());
    let mut kinds = Vec::with_capacity(7);
    if ne < cfg.encoder_blocks[1] {
        kinds.push(AddBlock(Segment::Encoder));
    }
    if nd < cfg.decoder_blocks[1] {
        kinds.push(AddBlock(Segment::Decoder));
    }
    if ne > cfg.encoder_blocks[0] {
        kinds.push(DropBlock(Segment::Encoder));
    }
    if nd > cfg.decoder_blocks[0] {
        kinds.push(DropBlock(Segment::Decoder));
    }
    kinds.push(AlterBlockType);
    kinds.push(AlterLayerParam);
    if nd >= 2 {
        kinds.push(RewireCrossAttention);
    }
    kinds
}

/// Apply one mutation, chosen uniformly among the applicable kinds.
///
/// The result may violate wiring invariants (e.g. after dropping the last
/// encoder block) and is meant to be passed through [`repair`].
pub fn mutate(g: &Genome, cfg: &SearchConfig, rng: &mut RngStream) -> Genome {
    use MutationKind::*;
    let mut out = g.clone();
    let kinds = applicable_mutations(g, cfg);
    match *rng.pick(&kinds) {
        AddBlock(Segment::Encoder) => {
            let pos = rng.below(out.encoders.len() + 1);
            let gene = draw_encoder_gene(cfg, rng);
            out.encoders.insert(pos, gene);
        }
        AddBlock(Segment::Decoder) => {
            let (ne, nd) = (out.encoders.len(), out.decoders.len());
            let pos = rng.below(nd + 1);
            let (block_type, params) = draw_decoder_gene(cfg, rng);
            // Wiring for the block's position in the grown stack; inserting
            // at the end yields the forced last-encoder wiring, and the
            // previous last block keeps its existing (still valid) source.
            let cross_source =
                sample_ce(pos + 1, ne, nd + 1, rng).expect("insert position is in range");
            out.decoders.insert(pos, DecoderGene { block_type, params, cross_source });
        }
        DropBlock(Segment::Encoder) => {
            let pos = rng.below(out.encoders.len());
            out.encoders.remove(pos);
        }
        DropBlock(Segment::Decoder) => {
            let pos = rng.below(out.decoders.len());
            out.decoders.remove(pos);
        }
        AlterBlockType => {
            let (ne, nd) = (out.encoders.len(), out.decoders.len());
            let idx = rng.below(ne + nd);
            if idx < ne {
                let gene = &mut out.encoders[idx];
                let old_layout = encoder_layout(gene.block_type).expect("valid genome");
                let others: Vec<u8> =
                    (1..=ENCODER_TYPE_COUNT).filter(|&t| t != gene.block_type).collect();
                gene.block_type = *rng.pick(&others);
                let new_layout = encoder_layout(gene.block_type).expect("drawn in range");
                for (k, kind) in new_layout.iter().enumerate() {
                    if *kind != old_layout[k] {
                        gene.params[k] = *rng.pick(cfg.domain_for(*kind));
                    }
                }
            } else {
                let gene = &mut out.decoders[idx - ne];
                let old_layout = decoder_layout(gene.block_type).expect("valid genome");
                let others: Vec<u8> =
                    (1..=DECODER_TYPE_COUNT).filter(|&t| t != gene.block_type).collect();
                gene.block_type = *rng.pick(&others);
                let new_layout = decoder_layout(gene.block_type).expect("drawn in range");
                for (k, kind) in new_layout.iter().enumerate() {
                    if *kind != old_layout[k] {
                        gene.params[k] = *rng.pick(cfg.domain_for(*kind));
                    }
                }
            }
        }
        AlterLayerParam => {
            let (ne, nd) = (out.encoders.len(), out.decoders.len());
            let slot = rng.below(2 * ne + 3 * nd);
            let (kind, param) = if slot < 2 * ne {
                let gene = &mut out.encoders[slot / 2];
                let layout = encoder_layout(gene.block_type).expect("valid genome");
                (layout[slot % 2], &mut gene.params[slot % 2])
            } else {
                let slot = slot - 2 * ne;
                let gene = &mut out.decoders[slot / 3];
                let layout = decoder_layout(gene.block_type).expect("valid genome");
                (layout[slot % 3], &mut gene.params[slot % 3])
            };
            let fresh: Vec<u32> =
                cfg.domain_for(kind).iter().copied().filter(|v| v != param).collect();
            if !fresh.is_empty() {
                *param = *rng.pick(&fresh);
            }
        }
        RewireCrossAttention => {
            let (ne, nd) = (out.encoders.len(), out.decoders.len());
            // Only non-last blocks; the last one's wiring is pinned.
            let pos = rng.below(nd - 1);
            out.decoders[pos].cross_source =
                sample_ce(pos + 1, ne, nd, rng).expect("position is in range");
        }
    }
    out
}

/// Restore the wiring invariants after structural edits: clamp every
/// `cross_source` into `[1, ne]` and pin the last decoder block to the last
/// encoder block. All other genes are untouched; idempotent.
pub fn repair(mut g: Genome) -> Genome {
    let ne = g.encoders.len();
    if ne == 0 {
        return g; // nothing to clamp against; validate() will flag it
    }
    for dec in &mut g.decoders {
        dec.cross_source = dec.cross_source.clamp(1, ne);
    }
    if let Some(last) = g.decoders.last_mut() {
        last.cross_source = ne;
    }
    g
}
