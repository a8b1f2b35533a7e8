//! Decomposition-based multi-objective search (MOEA/D).
//!
//! The bi-objective problem — minimize `(100 − BLEU, k·perplexity)` — is
//! decomposed into `N` scalar subproblems, one per weight vector, each
//! solved with the Tchebyshev scalarization against a running ideal point.
//! Subproblems exchange solutions only within their weight-space
//! neighborhoods, and an external archive keeps every non-dominated
//! objective vector seen so far.
//!
//! [`Search`] is an explicit stepper (initialize, then one subproblem per
//! [`Search::step_subproblem`]) so a run can be checkpointed mid-generation
//! and resumed bit-for-bit; [`run`] drives it to completion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{to_objectives, EvalMetrics, Evaluator, WORST_PERPLEXITY};
use crate::genome::{encode_flat, ConfigError, Genome, GenomeError, SearchConfig};
use crate::rng::{RngState, RngStateError, RngStream};
use crate::variation::{crossover, init_genome, mutate, repair};

/// Bumped whenever the checkpoint schema changes shape.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A point in minimized objective space: `f1 = 100 − BLEU`, `f2 = k·ppl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub f1: f64,
    pub f2: f64,
}

impl ObjectiveVector {
    /// Pareto dominance: no worse in both coordinates, strictly better in at
    /// least one. Irreflexive — a vector never dominates itself.
    pub fn dominates(&self, other: &ObjectiveVector) -> bool {
        self.f1 <= other.f1 && self.f2 <= other.f2 && (self.f1 < other.f1 || self.f2 < other.f2)
    }
}

/// Running componentwise minimum of all objective vectors seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdealPoint(pub [f64; 2]);

impl IdealPoint {
    pub fn update(&mut self, f: &ObjectiveVector) {
        self.0[0] = self.0[0].min(f.f1);
        self.0[1] = self.0[1].min(f.f2);
    }
}

impl From<&ObjectiveVector> for IdealPoint {
    fn from(f: &ObjectiveVector) -> Self {
        IdealPoint([f.f1, f.f2])
    }
}

/// Evenly spaced weight vectors on the 2-simplex: `λ_i = (i/(N−1), 1−i/(N−1))`.
/// Only the bi-objective case is supported.
pub fn gen_weight_vectors(n: usize, m: usize) -> Result<Vec<[f64; 2]>, SearchError> {
    if m != 2 {
        return Err(SearchError::UnsupportedObjectives(m));
    }
    if n < 2 {
        return Err(SearchError::PopulationTooSmall(n));
    }
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            [t, 1.0 - t]
        })
        .collect())
}

fn weight_distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// For each weight vector, the indices of its `t` closest weight vectors
/// (including itself) by Euclidean distance; ties broken toward the lower
/// index.
pub fn neighborhoods(weights: &[[f64; 2]], t: usize) -> Vec<Vec<usize>> {
    weights
        .iter()
        .map(|w| {
            let mut order: Vec<usize> = (0..weights.len()).collect();
            order.sort_by(|&a, &b| {
                weight_distance(w, &weights[a])
                    .total_cmp(&weight_distance(w, &weights[b]))
                    .then(a.cmp(&b))
            });
            order.truncate(t.min(weights.len()));
            order
        })
        .collect()
}

/// Tchebyshev scalarization `g(f | λ, z) = max_j λ_j · |f_j − z_j|`.
pub fn tchebyshev(f: &ObjectiveVector, weights: &[f64; 2], z: &IdealPoint) -> f64 {
    let a = weights[0] * (f.f1 - z.0[0]).abs();
    let b = weights[1] * (f.f2 - z.0[1]).abs();
    a.max(b)
}

/// One decomposed scalar subproblem and its current best solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subproblem {
    pub index: usize,
    pub weights: [f64; 2],
    pub neighbors: Vec<usize>,
    pub genome: Genome,
    pub objectives: ObjectiveVector,
}

/// A non-dominated solution retained by the external archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpEntry {
    pub genome: Genome,
    pub objectives: ObjectiveVector,
    pub bleu: f64,
    pub perplexity: f64,
    pub params: u64,
}

/// External archive of all non-dominated solutions seen so far.
///
/// Invariant: entries are pairwise non-dominated with pairwise distinct
/// objective vectors; when duplicates arrive, the first is kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpArchive {
    pub entries: Vec<EpEntry>,
}

impl EpArchive {
    /// Offers a candidate; returns true if it was admitted. Dominated and
    /// duplicate candidates are rejected; admission evicts every entry the
    /// candidate dominates.
    pub fn update(&mut self, candidate: EpEntry) -> bool {
        for e in &self.entries {
            if e.objectives.dominates(&candidate.objectives) || e.objectives == candidate.objectives
            {
                return false;
            }
        }
        self.entries.retain(|e| !candidate.objectives.dominates(&e.objectives));
        self.entries.push(candidate);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.entries.iter().map(|e| e.objectives).collect()
    }
}

/// Area (in minimized objective space) dominated by `points` and bounded by
/// `reference`; points at or beyond the reference contribute nothing.
pub fn hypervolume_2d(points: &[ObjectiveVector], reference: &ObjectiveVector) -> f64 {
    let mut front: Vec<&ObjectiveVector> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .filter(|p| p.f1 < reference.f1 && p.f2 < reference.f2)
        .collect();
    front.sort_by(|a, b| a.f1.total_cmp(&b.f1).then(a.f2.total_cmp(&b.f2)));
    front.dedup_by(|a, b| a == b);

    let mut area = 0.0;
    let mut prev_f2 = reference.f2;
    for p in front {
        area += (reference.f1 - p.f1) * (prev_f2 - p.f2).max(0.0);
        prev_f2 = prev_f2.min(p.f2);
    }
    area
}

/// One line of the evaluation history: every call into the evaluator, cached
/// or not, in execution order. Generation 0 is initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub generation: usize,
    pub genome_flat: Vec<u32>,
    pub f1: f64,
    pub f2: f64,
    pub bleu: f64,
    pub perplexity: f64,
    pub params: u64,
    /// True when the evaluator returned an error and worst-case objectives
    /// were substituted.
    pub failed: bool,
}

/// Everything needed to resume a run exactly where it left off. The
/// evaluation cache is deliberately not part of the state: the evaluator is
/// deterministic, so a resumed run re-derives identical metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub generation: usize,
    /// Next subproblem index within the current generation sweep.
    pub cursor: usize,
    pub initialized: bool,
    pub subproblems: Vec<Subproblem>,
    pub z: Option<IdealPoint>,
    pub ep: EpArchive,
    pub rng_state: RngState,
    pub eval_log: Vec<EvalRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: SearchConfig,
    #[serde(flatten)]
    pub state: SearchState,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("genome encoding failed: {0}")]
    Genome(#[from] GenomeError),
    #[error("only 2 objectives are supported, got {0}")]
    UnsupportedObjectives(usize),
    #[error("population {0} cannot span the weight simplex (need at least 2)")]
    PopulationTooSmall(usize),
    #[error("search used before initialize()")]
    NotInitialized,
    #[error("search already initialized")]
    AlreadyInitialized,
    #[error("checkpoint version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corrupt rng state: {0}")]
    RngState(#[from] RngStateError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn failure_metrics() -> EvalMetrics {
    EvalMetrics {
        bleu: 0.0,
        perplexity: WORST_PERPLEXITY,
        param_count: 0,
        epochs_run: 0,
        val_loss_trace: Vec::new(),
        diverged: true,
    }
}

/// The MOEA/D optimizer state machine. Construct with [`Search::new`], call
/// [`Search::initialize`] once, then [`Search::step_subproblem`] until
/// [`Search::done`].
pub struct Search {
    config: SearchConfig,
    subproblems: Vec<Subproblem>,
    ideal: Option<IdealPoint>,
    ep: EpArchive,
    eval_log: Vec<EvalRecord>,
    rng: RngStream,
    generation: usize,
    cursor: usize,
    initialized: bool,
    /// Metrics by flat encoding, so revisited genomes skip the evaluator.
    /// Never serialized; see [`SearchState`].
    cache: HashMap<Vec<u32>, (EvalMetrics, bool)>,
}

impl Search {
    pub fn new(config: SearchConfig, seed: u64) -> Result<Search, SearchError> {
        config.validate()?;
        Ok(Search {
            config,
            subproblems: Vec::new(),
            ideal: None,
            ep: EpArchive::default(),
            eval_log: Vec::new(),
            rng: RngStream::seed_from_u64(seed),
            generation: 0,
            cursor: 0,
            initialized: false,
            cache: HashMap::new(),
        })
    }

    /// Rebuilds a stepper from a checkpointed state. The evaluation cache
    /// starts cold; determinism of the evaluator makes that observationally
    /// identical to the uninterrupted run.
    pub fn restore(config: SearchConfig, state: SearchState) -> Result<Search, SearchError> {
        config.validate()?;
        if state.initialized && state.subproblems.len() != config.population {
            return Err(SearchError::CorruptCheckpoint(format!(
                "{} subproblems but population {}",
                state.subproblems.len(),
                config.population
            )));
        }
        if state.initialized && state.cursor >= config.population {
            return Err(SearchError::CorruptCheckpoint(format!(
                "cursor {} out of range for population {}",
                state.cursor, config.population
            )));
        }
        let rng = RngStream::restore(&state.rng_state)?;
        Ok(Search {
            config,
            subproblems: state.subproblems,
            ideal: state.z,
            ep: state.ep,
            eval_log: state.eval_log,
            rng,
            generation: state.generation,
            cursor: state.cursor,
            initialized: state.initialized,
            cache: HashMap::new(),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn ep(&self) -> &EpArchive {
        &self.ep
    }

    pub fn ideal(&self) -> Option<IdealPoint> {
        self.ideal
    }

    pub fn subproblems(&self) -> &[Subproblem] {
        &self.subproblems
    }

    pub fn eval_log(&self) -> &[EvalRecord] {
        &self.eval_log
    }

    /// All configured generations have been swept.
    pub fn done(&self) -> bool {
        self.initialized && self.cursor == 0 && self.generation >= self.config.generations
    }

    /// Snapshot for checkpointing; pair with [`Search::restore`].
    pub fn state(&self) -> SearchState {
        SearchState {
            generation: self.generation,
            cursor: self.cursor,
            initialized: self.initialized,
            subproblems: self.subproblems.clone(),
            z: self.ideal,
            ep: self.ep.clone(),
            rng_state: self.rng.state(),
            eval_log: self.eval_log.clone(),
        }
    }

    /// Evaluates a genome (through the cache), records the call in the
    /// history, and maps evaluator errors to the worst-case objectives so
    /// the search keeps moving.
    fn evaluate_genome<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
        genome: &Genome,
        generation: usize,
    ) -> Result<(EvalMetrics, ObjectiveVector, bool), SearchError> {
        let flat = encode_flat(genome)?;
        let (metrics, failed) = match self.cache.get(&flat) {
            Some(hit) => hit.clone(),
            None => {
                let outcome = match evaluator.evaluate(genome) {
                    Ok(m) => (m, false),
                    Err(_) => (failure_metrics(), true),
                };
                self.cache.insert(flat.clone(), outcome.clone());
                outcome
            }
        };
        let f = to_objectives(&metrics, self.config.objective_k);
        self.eval_log.push(EvalRecord {
            generation,
            genome_flat: flat,
            f1: f.f1,
            f2: f.f2,
            bleu: metrics.bleu,
            perplexity: metrics.perplexity,
            params: metrics.param_count,
            failed,
        });
        Ok((metrics, f, failed))
    }

    /// Draws the initial population, evaluates it (with up to `workers`
    /// threads — the only concurrency in the algorithm), seeds the ideal
    /// point with the componentwise minimum, and feeds the archive in index
    /// order.
    pub fn initialize<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
        workers: usize,
    ) -> Result<(), SearchError> {
        if self.initialized {
            return Err(SearchError::AlreadyInitialized);
        }
        let n = self.config.population;
        let weights = gen_weight_vectors(n, 2)?;
        let neighbor_sets = neighborhoods(&weights, self.config.neighborhood);
        let genomes: Vec<Genome> =
            (0..n).map(|_| init_genome(&self.config, &mut self.rng)).collect();

        if workers > 1 {
            self.prefill_cache_parallel(evaluator, &genomes, workers)?;
        }

        let mut entries = Vec::with_capacity(n);
        for genome in &genomes {
            let (metrics, f, _) = self.evaluate_genome(evaluator, genome, 0)?;
            entries.push((metrics, f));
        }

        let mut z = IdealPoint::from(&entries[0].1);
        for (_, f) in &entries[1..] {
            z.update(f);
        }
        self.ideal = Some(z);

        self.subproblems = genomes
            .iter()
            .zip(&entries)
            .enumerate()
            .map(|(i, (genome, (_, f)))| Subproblem {
                index: i,
                weights: weights[i],
                neighbors: neighbor_sets[i].clone(),
                genome: genome.clone(),
                objectives: *f,
            })
            .collect();

        for (genome, (metrics, f)) in genomes.iter().zip(&entries) {
            self.ep.update(EpEntry {
                genome: genome.clone(),
                objectives: *f,
                bleu: metrics.bleu,
                perplexity: metrics.perplexity,
                params: metrics.param_count,
            });
        }

        self.initialized = true;
        Ok(())
    }

    /// Evaluates the distinct uncached genomes of the initial population on
    /// a scoped thread pool and stores the results in the cache. Results are
    /// keyed by flat encoding, so scheduling order cannot leak into the
    /// (serially replayed) history.
    fn prefill_cache_parallel<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
        genomes: &[Genome],
        workers: usize,
    ) -> Result<(), SearchError> {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Mutex;

        let mut pending: Vec<(Vec<u32>, &Genome)> = Vec::new();
        for g in genomes {
            let flat = encode_flat(g)?;
            if !self.cache.contains_key(&flat) && !pending.iter().any(|(f, _)| *f == flat) {
                pending.push((flat, g));
            }
        }
        if pending.is_empty() {
            return Ok(());
        }

        let results: Vec<Mutex<Option<(EvalMetrics, bool)>>> =
            pending.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(pending.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= pending.len() {
                        break;
                    }
                    let outcome = match evaluator.evaluate(pending[i].1) {
                        Ok(m) => (m, false),
                        Err(_) => (failure_metrics(), true),
                    };
                    *results[i].lock().expect("result slot") = Some(outcome);
                });
            }
        });

        for ((flat, _), slot) in pending.into_iter().zip(results) {
            let outcome = slot.into_inner().expect("slot lock").expect("worker filled slot");
            self.cache.insert(flat, outcome);
        }
        Ok(())
    }

    /// Runs one subproblem update: pick two parents from the neighborhood,
    /// recombine/mutate/repair, evaluate, advance the ideal point, replace
    /// every neighbor the child scalarizes at least as well as, and offer
    /// the child to the archive.
    pub fn step_subproblem<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &E,
    ) -> Result<(), SearchError> {
        if !self.initialized {
            return Err(SearchError::NotInitialized);
        }
        if self.done() {
            return Ok(());
        }

        let i = self.cursor;
        let neighbors = self.subproblems[i].neighbors.clone();
        // Two distinct neighbor indices (one uniform draw each): the second
        // is drawn from the remaining slots by offset, so the pair is
        // uniform over ordered distinct pairs.
        let n = neighbors.len();
        let ik = self.rng.below(n);
        let il = if n == 1 { ik } else { (ik + 1 + self.rng.below(n - 1)) % n };
        let parent_a = self.subproblems[neighbors[ik]].genome.clone();
        let parent_b = self.subproblems[neighbors[il]].genome.clone();

        let mut child = if self.rng.coin(self.config.crossover_prob) {
            let (c1, c2) = crossover(&parent_a, &parent_b, &mut self.rng);
            if self.rng.coin(0.5) {
                c1
            } else {
                c2
            }
        } else if self.rng.coin(0.5) {
            parent_a
        } else {
            parent_b
        };
        if self.rng.coin(self.config.mutation_prob) {
            child = mutate(&child, &self.config, &mut self.rng);
        }
        let child = repair(child);

        let (metrics, f, _) = self.evaluate_genome(evaluator, &child, self.generation + 1)?;

        self.ideal.as_mut().expect("initialized").update(&f);
        let z = self.ideal.expect("initialized");
        for &j in &neighbors {
            let w = self.subproblems[j].weights;
            if tchebyshev(&f, &w, &z) <= tchebyshev(&self.subproblems[j].objectives, &w, &z) {
                self.subproblems[j].genome = child.clone();
                self.subproblems[j].objectives = f;
            }
        }

        self.ep.update(EpEntry {
            genome: child,
            objectives: f,
            bleu: metrics.bleu,
            perplexity: metrics.perplexity,
            params: metrics.param_count,
        });

        self.cursor += 1;
        if self.cursor >= self.subproblems.len() {
            self.cursor = 0;
            self.generation += 1;
        }
        Ok(())
    }
}

/// Final products of a completed run.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub ep: EpArchive,
    pub state: SearchState,
    pub history: Vec<EvalRecord>,
}

/// Runs the full algorithm: initialize, then sweep every subproblem for the
/// configured number of generations. With `generations = 0` the archive is
/// exactly the non-dominated subset of the initial population.
pub fn run<E: Evaluator + ?Sized>(
    config: SearchConfig,
    evaluator: &E,
    seed: u64,
) -> Result<SearchOutcome, SearchError> {
    let mut search = Search::new(config, seed)?;
    search.initialize(evaluator, 1)?;
    while !search.done() {
        search.step_subproblem(evaluator)?;
    }
    let state = search.state();
    Ok(SearchOutcome { ep: search.ep.clone(), history: state.eval_log.clone(), state })
}

/// Writes the checkpoint JSON atomically (temp file + rename).
pub fn checkpoint_save(
    state: &SearchState,
    config: &SearchConfig,
    path: &Path,
) -> Result<(), SearchError> {
    let checkpoint =
        Checkpoint { version: CHECKPOINT_VERSION, config: config.clone(), state: state.clone() };
    let json = serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    let io_err = |source| SearchError::Io { path: path.display().to_string(), source };
    fs::write(&tmp, json).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Reads a checkpoint, refusing other schema versions and malformed
/// payloads.
pub fn checkpoint_load(path: &Path) -> Result<(SearchConfig, SearchState), SearchError> {
    let text = fs::read_to_string(path)
        .map_err(|source| SearchError::Io { path: path.display().to_string(), source })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SearchError::CorruptCheckpoint("missing version field".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(SearchError::VersionMismatch {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let checkpoint: Checkpoint =
        serde_json::from_value(value).map_err(|e| SearchError::CorruptCheckpoint(e.to_string()))?;
    Ok((checkpoint.config, checkpoint.state))
}

/// Writes the archive as CSV, sorted by `f1` ascending. The flat genome
/// encoding is space-separated within its cell.
pub fn export_pareto_csv(ep: &EpArchive, path: &Path) -> Result<(), SearchError> {
    let text = pareto_csv(ep)?;
    fs::write(path, text)
        .map_err(|source| SearchError::Io { path: path.display().to_string(), source })
}

/// The CSV text behind [`export_pareto_csv`].
pub fn pareto_csv(ep: &EpArchive) -> Result<String, SearchError> {
    let mut rows = ep.entries.clone();
    rows.sort_by(|a, b| {
        a.objectives
            .f1
            .total_cmp(&b.objectives.f1)
            .then(a.objectives.f2.total_cmp(&b.objectives.f2))
    });
    let mut out = String::from("genome_flat,bleu,perplexity,f1,f2,params\n");
    for e in &rows {
        let flat = encode_flat(&e.genome)?;
        let cell: Vec<String> = flat.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.join(" "),
            e.bleu,
            e.perplexity,
            e.objectives.f1,
            e.objectives.f2,
            e.params
        ));
    }
    Ok(out)
}
