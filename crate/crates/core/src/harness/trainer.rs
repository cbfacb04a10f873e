//! The training loop: per-step seeded batches, forward with taps, combined
//! objective, reverse-mode gradients, Adam updates, and cadence-based
//! metric records.

use super::RunConfig;
use crate::data::sample_with;
use crate::diffusion::{diffusion_loss, noise_batch, NoisedViews};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, dispersive_loss, RepBatch};
use crate::metrics::{dispersion_stat, norm_probe};
use crate::model::{forward_with_taps, init_model, DenoiserState, ForwardTrace};
use crate::optim::Adam;
use crate::rng::{mix, stream_rng, streams};
use crate::tape::{backward, Tape, Var};
use crate::tensor::Tensor;

/// Metrics captured at one recorded step, before that step's update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss_total: f64,
    pub loss_diff: f64,
    pub loss_disp: f64,
    /// Mean row norm of every block's activations, block 1 first.
    pub block_norms: Vec<f64>,
    /// Mean pairwise distance at the first tapped block (last block when
    /// nothing is tapped).
    pub dispersion: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: DenoiserState,
    pub records: Vec<StepRecord>,
    pub completed_steps: u64,
}

struct StepOutput {
    grads: Vec<Tensor>,
    total: f64,
    diff: f64,
    disp: f64,
    block_norms: Vec<f64>,
    dispersion: f64,
}

fn mean_of<'t>(terms: Vec<Var<'t>>) -> Result<Option<Var<'t>>> {
    let count = terms.len();
    let mut iter = terms.into_iter();
    let Some(first) = iter.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for term in iter {
        acc = acc.add(term)?;
    }
    if count > 1 {
        acc = acc.mul_scalar(1.0 / count as f64)?;
    }
    Ok(Some(acc))
}

fn regularizer<'t>(
    trace1: &ForwardTrace<'t>,
    trace2: Option<&ForwardTrace<'t>>,
    cfg: &RunConfig,
) -> Result<Option<Var<'t>>> {
    let mut terms = Vec::with_capacity(trace1.taps.len());
    match trace2 {
        None => {
            for (_, z) in &trace1.taps {
                terms.push(dispersive_loss(&RepBatch::new(*z)?, &cfg.loss)?);
            }
        }
        Some(t2) => {
            for ((_, z1), (_, z2)) in trace1.taps.iter().zip(&t2.taps) {
                terms.push(contrastive_loss(
                    &RepBatch::new(*z1)?,
                    &RepBatch::new(*z2)?,
                    &cfg.loss,
                )?);
            }
        }
    }
    mean_of(terms)
}

fn execute_step(
    state: &DenoiserState,
    cfg: &RunConfig,
    views: &NoisedViews,
    want_metrics: bool,
) -> Result<StepOutput> {
    let tape = Tape::new();
    let vars = state.to_vars(&tape, true);
    let v1 = views.first();
    let trace1 = forward_with_taps(&vars, &v1.x_t, &v1.t)?;
    let trace2 = match views {
        NoisedViews::Single(_) => None,
        NoisedViews::Pair(_, v2) => Some(forward_with_taps(&vars, &v2.x_t, &v2.t)?),
    };

    let target = tape.constant(&v1.target);
    let diff = diffusion_loss(trace1.pred, target)?;
    let disp = regularizer(&trace1, trace2.as_ref(), cfg)?;
    let (total, disp_value) = match disp {
        Some(d) => {
            let total = if cfg.loss.lambda == 0.0 {
                diff
            } else {
                diff.add(d.mul_scalar(cfg.loss.lambda)?)?
            };
            (total, d.value().item())
        }
        None => (diff, 0.0),
    };

    let (block_norms, dispersion) = if want_metrics {
        let tapped: Vec<(usize, Tensor)> = trace1
            .blocks
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1, v.value()))
            .collect();
        let norms = norm_probe(&tapped).per_block.into_iter().map(|(_, n)| n).collect();
        let probe = trace1
            .taps
            .first()
            .map(|(_, z)| z.value())
            .unwrap_or_else(|| trace1.blocks.last().expect("at least one block").value());
        (norms, dispersion_stat(&probe)?)
    } else {
        (Vec::new(), 0.0)
    };

    let grads_all = backward(total)?;
    let grads = vars.flat().iter().map(|v| grads_all.wrt(*v)).collect();
    Ok(StepOutput {
        grads,
        total: total.value().item(),
        diff: diff.value().item(),
        disp: disp_value,
        block_norms,
        dispersion,
    })
}

/// Runs the configured training loop. `on_record` receives each cadence
/// record as it is produced; `on_checkpoint` receives the post-update state
/// at the same cadence. A non-finite value anywhere in a step aborts with
/// that step's index; whatever `on_checkpoint` persisted last is untouched.
pub fn train<FR, FC>(cfg: &RunConfig, mut on_record: FR, mut on_checkpoint: FC) -> Result<TrainOutcome>
where
    FR: FnMut(&StepRecord) -> Result<()>,
    FC: FnMut(&DenoiserState, u64) -> Result<()>,
{
    cfg.validate()?;
    let mut state = init_model(&cfg.model, cfg.seed)?;
    let mut params = state.tensors();
    let mut adam = Adam::new(cfg.optimizer, &params)?;
    let mut records = Vec::new();

    for step in 0..cfg.steps {
        let record_this = step % cfg.eval_every == 0 || step + 1 == cfg.steps;
        let step_seed = mix(cfg.seed, step);
        let wrap = |e: Error| Error::TrainingAborted {
            step,
            reason: e.to_string(),
        };

        let x0 = sample_with(
            cfg.dataset,
            cfg.batch_size,
            &mut stream_rng(step_seed, streams::DATA),
        );
        let views = noise_batch(&x0, step_seed, &cfg.policy).map_err(wrap)?;
        let out = execute_step(&state, cfg, &views, record_this).map_err(wrap)?;
        adam.step(&mut params, &out.grads).map_err(wrap)?;
        state.set_tensors(params.clone()).map_err(wrap)?;

        if record_this {
            let record = StepRecord {
                step,
                loss_total: out.total,
                loss_diff: out.diff,
                loss_disp: out.disp,
                block_norms: out.block_norms,
                dispersion: out.dispersion,
            };
            on_record(&record)?;
            records.push(record);
            on_checkpoint(&state, step + 1)?;
        }
    }

    Ok(TrainOutcome {
        state,
        records,
        completed_steps: cfg.steps,
    })
}

/// `train` without any persistence callbacks.
pub fn train_quiet(cfg: &RunConfig) -> Result<TrainOutcome> {
    train(cfg, |_| Ok(()), |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::diffusion::NoiseKind;

    #[test]
    fn records_follow_the_cadence() {
        let outcome = train_quiet(&tiny_config(2)).unwrap();
        let steps: Vec<u64> = outcome.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, [0, 3, 6]);
        for r in &outcome.records {
            assert!(r.loss_total.is_finite());
            assert_eq!(r.block_norms.len(), 2);
            assert!(r.dispersion >= 0.0);
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let a = train_quiet(&tiny_config(4)).unwrap();
        let b = train_quiet(&tiny_config(4)).unwrap();
        assert_eq!(a.records, b.records);
        for ((_, wa), (_, wb)) in a.state.weights().iter().zip(b.state.weights()) {
            assert_eq!(wa.data(), wb.data());
        }
    }

    #[test]
    fn lambda_zero_and_regularized_share_the_first_diffusion_loss() {
        let mut base = tiny_config(6);
        base.loss.lambda = 0.0;
        let mut reg = tiny_config(6);
        reg.loss.lambda = 0.5;
        let a = train_quiet(&base).unwrap();
        let b = train_quiet(&reg).unwrap();
        // Weights only diverge after the first update, so step 0 must agree
        // bit for bit on the denoising term.
        assert_eq!(a.records[0].loss_diff.to_bits(), b.records[0].loss_diff.to_bits());
        assert!(b.records[0].loss_total != a.records[0].loss_total);
    }

    #[test]
    fn two_view_policies_train_the_contrastive_objective() {
        for kind in [NoiseKind::TwoViewIndependent, NoiseKind::TwoViewRestricted] {
            let mut cfg = tiny_config(8);
            cfg.policy.kind = kind;
            let outcome = train_quiet(&cfg).unwrap();
            for r in &outcome.records {
                assert!(r.loss_total.is_finite());
                assert!(r.loss_disp.is_finite());
            }
        }
    }

    #[test]
    fn no_taps_means_pure_diffusion() {
        let mut cfg = tiny_config(10);
        cfg.model.tap_blocks = Some(vec![]);
        let outcome = train_quiet(&cfg).unwrap();
        for r in &outcome.records {
            assert_eq!(r.loss_disp, 0.0);
            assert_eq!(r.loss_total.to_bits(), r.loss_diff.to_bits());
            assert!(r.dispersion > 0.0, "fallback probe should use the last block");
        }
    }

    #[test]
    fn divergence_aborts_with_step_index() {
        let mut cfg = tiny_config(3);
        cfg.optimizer.lr = 1e80;
        cfg.steps = 50;
        let err = train_quiet(&cfg).unwrap_err();
        match err {
            Error::TrainingAborted { step, reason } => {
                assert!(step >= 1);
                assert!(!reason.is_empty());
            }
            other => panic!("expected abort, got {other}"),
        }
    }
}
