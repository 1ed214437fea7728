//! Trajectory-balance loss.
//!
//! For a complete trajectory `tau` ending in `x`:
//!
//! ```text
//! L(tau) = (log Z + sum_t log P_F(a_t | s_t) - log max(R(x), floor))^2
//! ```
//!
//! The backward-policy term is omitted: sequences are built by appending, so
//! each state has exactly one parent and `P_B = 1` along every trajectory.

use rayon::prelude::*;

use super::sampling::replay_log_probs;
use super::TrainError;
use crate::autodiff::{Tape, Var};
use crate::env::{AssemblyEnv, AssemblyState, Trajectory};
use crate::flowmodel::{FlowModel, StepInput};
use crate::policy::Policy;
use crate::reward::RewardSpec;
use crate::scalar::Scalar;

fn check_finite<T: Scalar>(value: T, traj: &Trajectory<T>, what: &str) -> Result<T, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite {
            what: what.to_string(),
            dump: format!(
                "actions={:?} log_probs={:?} reward={}",
                traj.actions, traj.forward_log_probs, traj.terminal_reward
            ),
        })
    }
}

/// Loss of one trajectory given its forward log-probabilities and logZ.
pub fn trajectory_balance<T: Scalar>(log_z: T, log_probs: &[T], reward: f64, spec: &RewardSpec) -> T {
    let sum: T = log_probs.iter().copied().sum();
    let d = log_z + sum - T::of(spec.loss_reward(reward).ln());
    d * d
}

/// Batch-mean loss, replaying `policy` on each trajectory's actions.
pub fn tb_loss<T: Scalar, P: Policy<T>>(
    policy: &P,
    env: &AssemblyEnv,
    batch: &[Trajectory<T>],
    spec: &RewardSpec,
) -> Result<T, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = T::zero();
    for traj in batch {
        env.validate_sequence(&traj.actions)?;
        let lp = replay_log_probs(policy, env, &traj.actions)?;
        let l = trajectory_balance(policy.log_z(), &lp, traj.terminal_reward, spec);
        total += check_finite(l, traj, "trajectory-balance loss")?;
    }
    Ok(total / T::of(batch.len() as f64))
}

/// Gradient of one trajectory's loss for every model tensor, in
/// [`FlowModel::params`] order followed by logZ.
#[derive(Debug, Clone)]
pub struct TrajectoryGrad<T> {
    pub loss: T,
    pub grads: Vec<Vec<T>>,
}

fn record_loss<T: Scalar>(
    model: &FlowModel<T>,
    env: &AssemblyEnv,
    traj: &Trajectory<T>,
    spec: &RewardSpec,
    tape: &mut Tape<T>,
) -> Result<(Var, [Var; 6]), TrainError> {
    let p = model.bind(tape);
    let mut hc = model.initial_state_on(tape);
    let mut input = StepInput::Start;
    let mut state = AssemblyState::empty();
    let mut acc = p.log_z;
    for &a in &traj.actions {
        let (logits, h, c) = model.forward_step_on(tape, &p, input, hc)?;
        let mask = env.valid_actions(&state)?;
        let lp = tape
            .masked_log_softmax(logits, &mask)
            .map_err(|_| TrainError::DeadEnd(state.filled.clone()))?;
        let pick = tape.index(lp, a)?;
        acc = tape.add(acc, pick)?;
        state = env.step(&state, a)?;
        hc = (h, c);
        input = StepInput::Token(a);
    }
    let log_r = T::of(spec.loss_reward(traj.terminal_reward).ln());
    let diff = tape.add_const(acc, -log_r);
    let loss = tape.square(diff);
    let [e, gw, gb, ow, ob] = p.network();
    Ok((loss, [e, gw, gb, ow, ob, p.log_z]))
}

/// Loss and analytic gradient of a single trajectory.
pub fn trajectory_grad<T: Scalar>(
    model: &FlowModel<T>,
    env: &AssemblyEnv,
    traj: &Trajectory<T>,
    spec: &RewardSpec,
) -> Result<TrajectoryGrad<T>, TrainError> {
    let mut tape = Tape::new();
    let (loss, vars) = record_loss(model, env, traj, spec, &mut tape)?;
    let value = check_finite(tape.item(loss), traj, "trajectory-balance loss")?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); tape.value(v).len()],
        })
        .collect();
    Ok(TrajectoryGrad { loss: value, grads })
}

/// Per-trajectory losses and the gradient of the batch mean (summed in batch
/// order, so the result does not depend on thread scheduling).
pub fn batch_grad<T: Scalar>(
    model: &FlowModel<T>,
    env: &AssemblyEnv,
    batch: &[Trajectory<T>],
    spec: &RewardSpec,
) -> Result<(Vec<T>, Vec<Vec<T>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per: Vec<TrajectoryGrad<T>> = batch
        .par_iter()
        .map(|t| trajectory_grad(model, env, t, spec))
        .collect::<Result<_, _>>()?;
    let scale = T::one() / T::of(batch.len() as f64);
    let mut total: Vec<Vec<T>> = per[0].grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
    for tg in &per {
        for (acc, g) in total.iter_mut().zip(&tg.grads) {
            for (a, &x) in acc.iter_mut().zip(g) {
                *a += x * scale;
            }
        }
    }
    Ok((per.iter().map(|t| t.loss).collect(), total))
}
