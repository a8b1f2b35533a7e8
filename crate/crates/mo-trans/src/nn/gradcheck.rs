//! Finite-difference verification of the backward pass.
//!
//! [`grad_check`] builds a 64-bit model from a plan, computes analytic
//! gradients once, then central finite differences for a deterministic
//! sample of parameter scalars drawn from **every** parameter tensor, so
//! each layer kind in the plan is covered. [`compare_entries`] is the bare
//! comparison rule, exposed separately so a deliberately corrupted entry
//! can be fed through it as a negative control.

use std::collections::BTreeSet;

use super::model::{Model, ModelPlan};
use super::tape::Tape;
use super::tensor::Tensor;
use super::NnError;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Maximum allowed `|analytic − fd| / max(1, |fd|)`.
    pub tolerance: f64,
    /// Finite-difference step.
    pub epsilon: f64,
    /// Minimum number of scalars to probe across the whole store.
    pub min_samples: usize,
    /// Seed for both parameter init and sample selection.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { tolerance: 1e-4, epsilon: 1e-5, min_samples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Applies the tolerance rule to `(param name, scalar index, analytic,
/// numeric)` rows.
pub fn compare_entries(entries: &[(String, usize, f64, f64)], tolerance: f64) -> GradCheckReport {
    let mut report = GradCheckReport { checked: entries.len(), failures: Vec::new() };
    for (param, index, analytic, numeric) in entries {
        let rel_err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        if rel_err > tolerance {
            report.failures.push(GradFailure {
                param: param.clone(),
                index: *index,
                analytic: *analytic,
                numeric: *numeric,
                rel_err,
            });
        }
    }
    report
}

/// Checks analytic gradients of the teacher-forced loss on `(src, tgt)`
/// against central finite differences in 64-bit arithmetic.
pub fn grad_check(
    plan: &ModelPlan,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    config: &GradCheckConfig,
) -> Result<GradCheckReport, NnError> {
    let mut model = Model::<f64>::init(plan.clone(), config.seed);
    let mut rng = RngStream::seed_from_u64(config.seed ^ 0x5bd1_e995);

    // Analytic gradients, one backward sweep.
    let mut analytic: Vec<Option<Tensor<f64>>> = (0..model.store.len()).map(|_| None).collect();
    {
        let mut tape = Tape::new();
        let (loss, _) = model.loss(&mut tape, src, tgt)?;
        let mut grads = tape.backward(loss)?;
        for (index, tensor) in tape.param_grads(&mut grads) {
            analytic[index] = Some(tensor);
        }
    }

    let eval = |model: &Model<f64>| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let (loss, _) = model.loss(&mut tape, src, tgt)?;
        Ok(tape.value(loss).item())
    };

    let entries_total = model.store.len();
    let per_entry = config.min_samples.div_ceil(entries_total).max(1);
    let mut rows = Vec::new();
    for (e, grad) in analytic.iter().enumerate() {
        let numel = model.store.tensor(e).numel();
        let chosen: Vec<usize> = if per_entry >= numel {
            (0..numel).collect()
        } else {
            let mut set = BTreeSet::new();
            while set.len() < per_entry {
                set.insert(rng.below(numel));
            }
            set.into_iter().collect()
        };
        let name = model.store.name(e).to_string();
        for idx in chosen {
            let original = model.store.tensor(e).data()[idx];
            model.store.tensor_mut(e).data_mut()[idx] = original + config.epsilon;
            let plus = eval(&model)?;
            model.store.tensor_mut(e).data_mut()[idx] = original - config.epsilon;
            let minus = eval(&model)?;
            model.store.tensor_mut(e).data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = grad.as_ref().map_or(0.0, |t| t.data()[idx]);
            rows.push((name.clone(), idx, a, numeric));
        }
    }
    Ok(compare_entries(&rows, config.tolerance))
}
