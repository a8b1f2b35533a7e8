//! End-to-end tests for the `mo-trans` binary: exit-code contract, output
//! formats, and agreement between the CLI and the library it fronts.
//!
//! Every test works in its own scratch directory under the system temp dir
//! and spawns the binary Cargo built for this test run, so the suite can run
//! in parallel and leaves nothing behind.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mo_trans::genome::{search_space_size, SearchConfig};

use common::parse_dot;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mo-trans"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mo-trans binary")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("binary terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

/// Fresh scratch directory, removed when the guard drops.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Scratch {
        let dir = std::env::temp_dir().join(format!("mo-trans-cli-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).expect("create scratch dir");
        Scratch(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, contents).expect("write scratch file");
        path
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

/// A small search configuration that keeps CLI runs fast and genomes short.
const SMALL_CONFIG: &str = r#"{
  "encoder_blocks": [1, 3],
  "decoder_blocks": [1, 3],
  "head_choices": [4],
  "ffn_dim_choices": [64],
  "population": 6,
  "generations": 2,
  "neighborhood": 3,
  "embed_dim": 32,
  "seed": 9
}"#;

fn small_config() -> SearchConfig {
    serde_json::from_str(SMALL_CONFIG).expect("small config parses")
}

/// A genome valid under [`SMALL_CONFIG`]: two encoders, two decoders, the
/// last decoder wired to the top encoder block.
const SMALL_GENOME: &str = r#"{
  "ne": 2,
  "encoders": [
    {"te": 1, "p1": 4, "p2": 64},
    {"te": 3, "p1": 4, "p2": 4}
  ],
  "nd": 2,
  "decoders": [
    {"td": 2, "p1": 4, "p2": 4, "p3": 64, "ce": 1},
    {"td": 1, "p1": 4, "p2": 4, "p3": 64, "ce": 2}
  ]
}"#;

// ---------------------------------------------------------------------------
// Exit-code contract
// ---------------------------------------------------------------------------

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let no_args = bin().output().expect("spawn");
    assert_eq!(exit_code(&no_args), 1, "bare invocation is a usage error");

    let help = run(&["--help"]);
    assert_eq!(exit_code(&help), 0, "--help is a success");
    let text = stdout(&help);
    for subcommand in ["search", "space-size", "eval", "export"] {
        assert!(text.contains(subcommand), "--help lists {subcommand}");
    }

    let unknown = run(&["frobnicate"]);
    assert_eq!(exit_code(&unknown), 1, "unknown subcommand is a usage error");

    let bad_flag = run(&["space-size", "2", "2", "--no-such-flag"]);
    assert_eq!(exit_code(&bad_flag), 1, "unknown flag is a usage error");
}

#[test]
fn missing_files_are_usage_errors() {
    let eval = run(&["eval", "/nonexistent/genome.json"]);
    assert_eq!(exit_code(&eval), 1);
    assert!(stderr(&eval).contains("cannot read"), "names the unreadable file");

    let export = run(&["export", "/nonexistent/checkpoint.json", "--pareto", "/tmp/x.csv"]);
    assert_eq!(exit_code(&export), 1);
}

// ---------------------------------------------------------------------------
// space-size
// ---------------------------------------------------------------------------

#[test]
fn space_size_output_matches_library() {
    let out = run(&["space-size", "6", "6"]);
    assert_eq!(exit_code(&out), 0);
    let line = stdout(&out);
    let exact = search_space_size(6, 6, &SearchConfig::default()).to_string();
    assert!(line.starts_with(&exact), "stdout starts with the exact count {exact}, got: {line}");
    assert!(line.contains('≈'), "includes a rounded form: {line}");

    // Domain overrides flow through to the same numbers the library computes.
    let out = run(&["space-size", "3", "2", "--heads", "2,4", "--dims", "8"]);
    assert_eq!(exit_code(&out), 0);
    let config = SearchConfig {
        head_choices: vec![2, 4],
        ffn_dim_choices: vec![8],
        ..SearchConfig::default()
    };
    let exact = search_space_size(3, 2, &config).to_string();
    assert!(stdout(&out).starts_with(&exact));
}

#[test]
fn space_size_rejects_degenerate_arguments() {
    let zero = run(&["space-size", "0", "2"]);
    assert_eq!(exit_code(&zero), 1);
    assert!(stderr(&zero).contains("at least 1"));
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[test]
fn eval_is_deterministic_and_json() {
    let scratch = Scratch::new("eval-json");
    let config = scratch.write("config.json", SMALL_CONFIG);
    let genome = scratch.write("genome.json", SMALL_GENOME);

    let args = ["eval", genome.to_str().unwrap(), "--config", config.to_str().unwrap()];
    let first = run(&args);
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    let second = run(&args);
    assert_eq!(stdout(&first), stdout(&second), "metrics are run-to-run identical");

    let metrics: serde_json::Value =
        serde_json::from_str(&stdout(&first)).expect("stdout is a JSON object");
    for field in ["bleu", "perplexity", "param_count"] {
        assert!(metrics.get(field).is_some(), "metrics carry {field}");
    }
    let bleu = metrics["bleu"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&bleu), "BLEU in range, got {bleu}");
    assert!(metrics["perplexity"].as_f64().unwrap() >= 1.0);
}

#[test]
fn eval_accepts_flat_encoding_and_agrees_with_json_form() {
    let scratch = Scratch::new("eval-flat");
    let config = scratch.write("config.json", SMALL_CONFIG);
    let genome = scratch.write("genome.json", SMALL_GENOME);
    // Same genome, flat whitespace encoding.
    let flat = scratch.write("genome.flat", "2  1 4 64  3 4 4  2  2 4 4 64 1  1 4 4 64 2\n");

    let from_json = run(&["eval", genome.to_str().unwrap(), "--config", config.to_str().unwrap()]);
    let from_flat = run(&["eval", flat.to_str().unwrap(), "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&from_flat), 0, "stderr: {}", stderr(&from_flat));
    assert_eq!(stdout(&from_json), stdout(&from_flat), "both encodings name one genome");
}

#[test]
fn eval_rejects_invalid_genome_and_prints_violations() {
    let scratch = Scratch::new("eval-invalid");
    let config = scratch.write("config.json", SMALL_CONFIG);
    // Last decoder wired below the top encoder block: a validity violation.
    let genome = scratch.write(
        "genome.json",
        &SMALL_GENOME.replace(r#""p3": 64, "ce": 2"#, r#""p3": 64, "ce": 1"#),
    );

    let out = run(&["eval", genome.to_str().unwrap(), "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "invalid genome is a usage error");
    let err = stderr(&out);
    assert!(err.contains("violates 1 invariant"), "counts violations: {err}");
    assert!(err.contains("last decoder"), "prints the violation itself: {err}");
}

// ---------------------------------------------------------------------------
// search + export
// ---------------------------------------------------------------------------

/// Runs a small surrogate search into `dir` and returns the checkpoint path.
fn run_small_search(scratch: &Scratch, dir: &str) -> PathBuf {
    let config = scratch.write("config.json", SMALL_CONFIG);
    let out_dir = scratch.path(dir);
    let out =
        run(&["search", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "search failed: {}", stderr(&out));
    out_dir.join("checkpoint.json")
}

fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).expect("read CSV");
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("genome_flat,bleu,perplexity,f1,f2,params"),
        "CSV header names every column"
    );
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn search_writes_consistent_artifacts_and_manifest() {
    let scratch = Scratch::new("search-artifacts");
    let checkpoint = run_small_search(&scratch, "run");
    assert!(checkpoint.is_file());

    let rows = parse_csv(&scratch.path("run/pareto.csv"));
    assert!(!rows.is_empty(), "archive is never empty after a run");
    let config = small_config();
    for row in &rows {
        assert_eq!(row.len(), 6, "six columns per row");
        let bleu: f64 = row[1].parse().unwrap();
        let perplexity: f64 = row[2].parse().unwrap();
        let f1: f64 = row[3].parse().unwrap();
        let f2: f64 = row[4].parse().unwrap();
        assert!((f1 - (100.0 - bleu)).abs() < 1e-9, "f1 mirrors 100 - BLEU");
        assert!((f2 - config.objective_k * perplexity).abs() < 1e-9, "f2 mirrors k x perplexity");
    }
    // Rows are sorted by f1, and the front is strictly improving in f2.
    let f1s: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    let f2s: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    for w in f1s.windows(2) {
        assert!(w[0] <= w[1], "f1 column is sorted");
    }
    for w in f2s.windows(2) {
        assert!(w[0] > w[1], "archive rows trade f1 against f2");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scratch.path("run/manifest.json")).unwrap())
            .expect("manifest parses");
    assert_eq!(manifest["evaluator"], "surrogate");
    assert_eq!(manifest["seed"], 9);
    // One evaluation per initial member plus one per (generation, subproblem).
    let expected = config.population + config.population * config.generations;
    assert_eq!(manifest["evaluations"], expected as u64);
    assert_eq!(manifest["generations_completed"], config.generations as u64);
}

#[test]
fn search_with_k_zero_zeroes_the_second_objective() {
    let scratch = Scratch::new("search-k0");
    let config = scratch.write("config.json", SMALL_CONFIG);
    let out_dir = scratch.path("run");
    let out = run(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--k",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));

    let rows = parse_csv(&out_dir.join("pareto.csv"));
    // With f2 identically zero the front collapses to a single best-f1 point.
    assert_eq!(rows.len(), 1, "degenerate objective leaves one archive entry");
    for row in &rows {
        let f2: f64 = row[4].parse().unwrap();
        assert_eq!(f2, 0.0, "k = 0 zeroes f2");
    }
}

#[test]
fn export_requires_something_to_do() {
    let scratch = Scratch::new("export-nothing");
    let checkpoint = run_small_search(&scratch, "run");

    let out = run(&["export", checkpoint.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("nothing to export"));

    // --dot without --genome is rejected by argument parsing.
    let dot_only = run(&[
        "export",
        checkpoint.to_str().unwrap(),
        "--dot",
        scratch.path("x.dot").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&dot_only), 1);
}

#[test]
fn export_pareto_matches_search_output() {
    let scratch = Scratch::new("export-pareto");
    let checkpoint = run_small_search(&scratch, "run");

    let csv = scratch.path("exported.csv");
    let out = run(&["export", checkpoint.to_str().unwrap(), "--pareto", csv.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        fs::read_to_string(scratch.path("run/pareto.csv")).unwrap(),
        "export reproduces the CSV the search wrote"
    );
}

#[test]
fn export_dot_is_structurally_valid() {
    let scratch = Scratch::new("export-dot");
    let checkpoint = run_small_search(&scratch, "run");

    let dot_path = scratch.path("genome.dot");
    let out = run(&[
        "export",
        checkpoint.to_str().unwrap(),
        "--genome",
        "0",
        "--dot",
        dot_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));

    let text = fs::read_to_string(&dot_path).expect("DOT file written");
    let graph = parse_dot(&text).expect("DOT output parses");

    // Stack extent, read back from the node names.
    let block_index = |name: &str| -> Option<usize> {
        let rest = name.get(1..)?;
        let (block, _) = rest.split_once("_l")?;
        block.parse().ok()
    };
    let ne = graph
        .nodes
        .iter()
        .filter(|n| n.starts_with('e') && n.contains("_l"))
        .filter_map(|n| block_index(n))
        .max()
        .expect("encoder nodes present");
    let nd = graph
        .nodes
        .iter()
        .filter(|n| n.starts_with('d') && n.contains("_l"))
        .filter_map(|n| block_index(n))
        .max()
        .expect("decoder nodes present");

    for anchor in ["src", "tgt", "out"] {
        assert!(graph.nodes.iter().any(|n| n == anchor), "declares {anchor}");
    }

    // Every dashed edge is a cross connection: encoder block output into a
    // decoder layer. Exactly one per decoder block, and the last decoder
    // block reads the top of the encoder stack.
    let dashed: Vec<&(String, String, bool)> =
        graph.edges.iter().filter(|(_, _, dashed)| *dashed).collect();
    assert_eq!(dashed.len(), nd, "one cross edge per decoder block");
    let mut targets = Vec::new();
    for (from, to, _) in &dashed {
        assert!(
            from.starts_with('e') && from.ends_with("_l2"),
            "cross edge leaves an encoder block output: {from}"
        );
        assert!(to.starts_with('d'), "cross edge enters a decoder layer: {to}");
        let source = block_index(from).unwrap();
        assert!((1..=ne).contains(&source), "wiring stays inside the stack");
        targets.push(block_index(to).unwrap());
    }
    targets.sort_unstable();
    assert_eq!(targets, (1..=nd).collect::<Vec<_>>(), "each decoder block wired once");
    let last = dashed.iter().find(|(_, to, _)| block_index(to) == Some(nd)).unwrap();
    assert_eq!(
        block_index(&last.0),
        Some(ne),
        "last decoder block attends to the top encoder block"
    );

    // Solid edges chain the stacks: src into the first encoder layer, tgt
    // into the first decoder layer, the last decoder layer into out.
    let solid =
        |a: &str, b: &str| graph.edges.iter().any(|(f, t, dashed)| !dashed && f == a && t == b);
    assert!(solid("src", "e1_l1"));
    assert!(solid("tgt", "d1_l1"));
    assert!(solid(&format!("d{nd}_l3"), "out"));

    // Without --dot the same schematic goes to stdout.
    let to_stdout = run(&["export", checkpoint.to_str().unwrap(), "--genome", "0"]);
    assert_eq!(exit_code(&to_stdout), 0);
    assert_eq!(stdout(&to_stdout), text, "stdout and file exports agree");
}

#[test]
fn export_rejects_out_of_range_index() {
    let scratch = Scratch::new("export-range");
    let checkpoint = run_small_search(&scratch, "run");

    let out = run(&[
        "export",
        checkpoint.to_str().unwrap(),
        "--genome",
        "999",
        "--dot",
        scratch.path("x.dot").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("out of range"));
}
