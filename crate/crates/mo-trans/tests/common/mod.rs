//! Shared test oracles, deliberately written as brute force or first
//! principles rather than reusing the library's shortcuts.

// Each integration-test binary pulls in the subset it needs.
#![allow(dead_code)]

use mo_trans::genome::{DecoderGene, EncoderGene, Genome, SearchConfig};

/// Slot domains per encoder block type, straight from the encoding table:
/// type 1 = [attn, ffn], 2 = [ffn, attn], 3 = [attn, attn], 4 = [ffn, ffn].
fn encoder_slot_domains(cfg: &SearchConfig, te: u8) -> [&[u32]; 2] {
    let h: &[u32] = &cfg.head_choices;
    let f: &[u32] = &cfg.ffn_dim_choices;
    match te {
        1 => [h, f],
        2 => [f, h],
        3 => [h, h],
        4 => [f, f],
        _ => unreachable!("encoder types are 1..=4"),
    }
}

/// Decoder types: 1 = [M-MHA, C-MHA, FFN], 2 = [C-MHA, M-MHA, FFN],
/// 3 = [M-MHA, FFN, C-MHA].
fn decoder_slot_domains(cfg: &SearchConfig, td: u8) -> [&[u32]; 3] {
    let h: &[u32] = &cfg.head_choices;
    let f: &[u32] = &cfg.ffn_dim_choices;
    match td {
        1 | 2 => [h, h, f],
        3 => [h, f, h],
        _ => unreachable!("decoder types are 1..=3"),
    }
}

/// Counts every distinct genome with exactly `ne` encoder and `nd` decoder
/// blocks by visiting each combination of choices individually — a
/// mixed-radix odometer over per-position option lists, accumulating one
/// genome at a time. No closed-form products anywhere: even the per-position
/// option counts come from materializing loops.
pub fn count_genomes(ne: usize, nd: usize, cfg: &SearchConfig) -> u128 {
    // Options at one encoder position: every (type, p1, p2).
    let mut enc_options = 0usize;
    for te in 1..=4u8 {
        let [d1, d2] = encoder_slot_domains(cfg, te);
        for _ in d1 {
            for _ in d2 {
                enc_options += 1;
            }
        }
    }
    // Parameter options at one decoder position: every (type, p1, p2, p3).
    let mut dec_param_options = 0usize;
    for td in 1..=3u8 {
        let [d1, d2, d3] = decoder_slot_domains(cfg, td);
        for _ in d1 {
            for _ in d2 {
                for _ in d3 {
                    dec_param_options += 1;
                }
            }
        }
    }

    let mut radices = vec![enc_options; ne];
    for position in 1..=nd {
        let ce_choices = if position == nd { 1 } else { ne };
        let mut opts = 0usize;
        for _ in 0..dec_param_options {
            for _ in 0..ce_choices {
                opts += 1;
            }
        }
        radices.push(opts);
    }

    // Each digit vector indexes one option per position, so every genome is
    // visited exactly once.
    let mut digits = vec![0usize; radices.len()];
    let mut count: u128 = 0;
    'odometer: loop {
        for _ in 0..radices[0] {
            count += 1;
        }
        let mut i = 1;
        loop {
            if i == digits.len() {
                break 'odometer;
            }
            digits[i] += 1;
            if digits[i] < radices[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
    count
}

/// Materializes every genome with exactly `ne` encoder and `nd` decoder
/// blocks. Use only on spaces small enough to hold in memory.
pub fn enumerate_genomes(ne: usize, nd: usize, cfg: &SearchConfig) -> Vec<Genome> {
    fn dec_rec(
        cfg: &SearchConfig,
        ne: usize,
        nd: usize,
        encoders: &[EncoderGene],
        stack: &mut Vec<DecoderGene>,
        out: &mut Vec<Genome>,
    ) {
        let position = stack.len() + 1;
        if position > nd {
            out.push(Genome { encoders: encoders.to_vec(), decoders: stack.clone() });
            return;
        }
        let ce_range: Vec<usize> = if position == nd { vec![ne] } else { (1..=ne).collect() };
        for td in 1..=3u8 {
            let [d1, d2, d3] = decoder_slot_domains(cfg, td);
            for &p1 in d1 {
                for &p2 in d2 {
                    for &p3 in d3 {
                        for &ce in &ce_range {
                            stack.push(DecoderGene {
                                block_type: td,
                                params: [p1, p2, p3],
                                cross_source: ce,
                            });
                            dec_rec(cfg, ne, nd, encoders, stack, out);
                            stack.pop();
                        }
                    }
                }
            }
        }
    }

    fn enc_rec(
        cfg: &SearchConfig,
        ne: usize,
        nd: usize,
        stack: &mut Vec<EncoderGene>,
        out: &mut Vec<Genome>,
    ) {
        if stack.len() == ne {
            let mut decoders = Vec::new();
            dec_rec(cfg, ne, nd, stack, &mut decoders, out);
            return;
        }
        for te in 1..=4u8 {
            let [d1, d2] = encoder_slot_domains(cfg, te);
            for &p1 in d1 {
                for &p2 in d2 {
                    stack.push(EncoderGene { block_type: te, params: [p1, p2] });
                    enc_rec(cfg, ne, nd, stack, out);
                    stack.pop();
                }
            }
        }
    }

    let mut out = Vec::new();
    enc_rec(cfg, ne, nd, &mut Vec::new(), &mut out);
    out
}

/// All genomes whose block counts fall inside the config bounds.
pub fn enumerate_space(cfg: &SearchConfig) -> Vec<Genome> {
    let mut out = Vec::new();
    for ne in cfg.encoder_blocks[0]..=cfg.encoder_blocks[1] {
        for nd in cfg.decoder_blocks[0]..=cfg.decoder_blocks[1] {
            out.extend(enumerate_genomes(ne, nd, cfg));
        }
    }
    out
}

/// Exact minimization Pareto front of a point cloud by sort-and-scan:
/// sort by (f1, f2) ascending, keep each first-of-f1-group point whose f2
/// strictly improves on everything to its left. Returns deduplicated
/// vectors in f1-ascending order.
pub fn pareto_front_oracle(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sorted.dedup();
    let mut front = Vec::new();
    let mut best_f2 = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let (f1, f2) = sorted[i];
        if f2 < best_f2 {
            front.push((f1, f2));
            best_f2 = f2;
        }
        while i < sorted.len() && sorted[i].0 == f1 {
            i += 1;
        }
    }
    front
}

/// What the DOT checker extracted from a schematic.
pub struct DotGraph {
    pub nodes: Vec<String>,
    /// `(tail, head, dashed)` per edge.
    pub edges: Vec<(String, String, bool)>,
}

/// Minimal structural parser for the DOT subset the exporter emits:
/// validates shape (braces, statement terminators, quoting) and that every
/// edge endpoint was declared as a node.
pub fn parse_dot(text: &str) -> Result<DotGraph, String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or("empty input")?;
    if !(header.starts_with("digraph ") && header.ends_with('{')) {
        return Err(format!("bad header: {header}"));
    }

    let mut depth = 1i32;
    let mut nodes: Vec<String> = Vec::new();
    let mut edges: Vec<(String, String, bool)> = Vec::new();

    for line in lines {
        if line == "}" {
            depth -= 1;
            if depth < 0 {
                return Err("unbalanced closing brace".into());
            }
            continue;
        }
        if line.starts_with("subgraph ") {
            if !line.ends_with('{') {
                return Err(format!("subgraph without brace: {line}"));
            }
            depth += 1;
            continue;
        }
        if !line.ends_with(';') {
            return Err(format!("statement missing terminator: {line}"));
        }
        if line.matches('"').count() % 2 != 0 {
            return Err(format!("unbalanced quotes: {line}"));
        }
        let body = line.trim_end_matches(';').trim();
        if let Some(arrow) = body.find("->") {
            let tail = body[..arrow].trim().to_string();
            let rest = body[arrow + 2..].trim();
            let (head, attrs) = match rest.find('[') {
                Some(b) => (rest[..b].trim().to_string(), rest[b..].to_string()),
                None => (rest.to_string(), String::new()),
            };
            if tail.is_empty() || head.is_empty() {
                return Err(format!("malformed edge: {line}"));
            }
            edges.push((tail, head, attrs.contains("dashed")));
        } else if let Some(b) = body.find('[') {
            let name = body[..b].trim();
            if name.is_empty() || !body.ends_with(']') {
                return Err(format!("malformed node statement: {line}"));
            }
            // `node [shape=box]` is a default-attribute statement, not a node.
            if !["node", "edge", "graph"].contains(&name) {
                nodes.push(name.to_string());
            }
        } else if !body.contains('=') {
            return Err(format!("unrecognized statement: {line}"));
        }
    }
    if depth != 0 {
        return Err(format!("unbalanced braces: depth {depth} at EOF"));
    }
    for (tail, head, _) in &edges {
        for endpoint in [tail, head] {
            if !nodes.iter().any(|n| n == endpoint) {
                return Err(format!("edge references undeclared node {endpoint}"));
            }
        }
    }
    Ok(DotGraph { nodes, edges })
}
