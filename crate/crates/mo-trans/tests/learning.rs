//! End-to-end learning checks: the neural evaluator must actually train
//! models that solve the synthetic tasks at desk scale.

use mo_trans::data::{gen_synthetic, SyntheticTask};
use mo_trans::evaluator::neural_evaluate;
use mo_trans::genome::{DecoderGene, EncoderGene, Genome, TrainConfig};

/// A plain stack: type-1 blocks throughout, every decoder cross-attending
/// to its aligned encoder block, heads 4, feed-forward width 256.
fn baseline_genome(ne: usize, nd: usize) -> Genome {
    Genome {
        encoders: (0..ne).map(|_| EncoderGene { block_type: 1, params: [4, 256] }).collect(),
        decoders: (1..=nd)
            .map(|i| DecoderGene {
                block_type: 1,
                params: [4, 4, 256],
                cross_source: if i == nd { ne } else { i.min(ne) },
            })
            .collect(),
    }
}

#[test]
fn copy_task_reaches_high_bleu_within_ten_epochs() {
    let corpus = gen_synthetic(SyntheticTask::Copy, 2000, 16, [3, 10], 42).unwrap();
    let train = TrainConfig::default();
    let start = std::time::Instant::now();
    let metrics = neural_evaluate(&baseline_genome(3, 3), &corpus, &train, 32, 7).unwrap();
    println!(
        "copy 3/3: bleu {:.2}, ppl {:.3}, epochs {}, trace {:?}, {:.1}s",
        metrics.bleu,
        metrics.perplexity,
        metrics.epochs_run,
        metrics.val_loss_trace,
        start.elapsed().as_secs_f64()
    );
    assert!(!metrics.diverged, "training diverged: {:?}", metrics.val_loss_trace);
    assert!(metrics.epochs_run <= train.max_epochs);
    assert!(
        metrics.bleu >= 90.0,
        "copy task should be essentially solved, got BLEU {:.2} (trace {:?})",
        metrics.bleu,
        metrics.val_loss_trace
    );
}
