//! Dataset-as-environment encoding and the PPO building blocks.

use evguard_autodiff::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::traces::{Label, LabeledTuple};

/// `+1` for a caught attack, `0` for a correctly passed benign report, `-1` for any mistake.
pub fn ids_reward(action: u8, label: u8) -> f64 {
    match (action, label) {
        (1, 1) => 1.0,
        (0, 0) => 0.0,
        _ => -1.0,
    }
}

/// One step of the classification episode; `next` is `None` at the terminal row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionSlot {
    pub state: usize,
    pub next: Option<usize>,
    pub label: Label,
}

/// Walks `order` (indices into `rows`) as one trajectory.
pub fn encode_transitions_in(rows: &[LabeledTuple], order: &[usize]) -> Result<Vec<TransitionSlot>> {
    if order.len() < 2 {
        return Err(Error::Dataset("an IDS episode needs at least two rows".into()));
    }
    Ok(order
        .iter()
        .enumerate()
        .map(|(t, &i)| TransitionSlot {
            state: i,
            next: order.get(t + 1).copied(),
            label: rows[i].label,
        })
        .collect())
}

pub fn encode_transitions(rows: &[LabeledTuple]) -> Result<Vec<TransitionSlot>> {
    let order: Vec<usize> = (0..rows.len()).collect();
    encode_transitions_in(rows, &order)
}

/// Shuffles `0..n` and cuts it into consecutive minibatches; the last may be short.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Generalized advantage estimates. `values` carries one trailing bootstrap entry
/// (0 for a terminal end).
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::InvalidRequest(format!(
            "gae needs {} values, got {}",
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + discount * values[t + 1] - values[t];
        running = delta + discount * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

fn column(g: &mut Graph, v: &[f64]) -> Var {
    g.constant(Tensor::column(v.to_vec()))
}

/// Clipped surrogate `-mean(min(r A, clip(r, 1-eps, 1+eps) A))` with
/// `r = exp(new - old)`. `new_log_probs` is an `m x 1` node.
pub fn ppo_policy_loss(
    g: &mut Graph,
    new_log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<Var> {
    let old = column(g, old_log_probs);
    let adv = column(g, advantages);
    let diff = g.sub(new_log_probs, old)?;
    let ratio = g.exp(diff);
    let plain = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
    let clipped = g.mul(clipped, adv)?;
    let surrogate = g.minimum(plain, clipped)?;
    let mean = g.mean(surrogate);
    Ok(g.neg(mean))
}

/// Mean squared error between an `m x 1` value node and fixed targets.
pub fn critic_loss(g: &mut Graph, values: Var, returns: &[f64]) -> Result<Var> {
    let target = column(g, returns);
    let err = g.sub(values, target)?;
    let sq = g.mul(err, err)?;
    Ok(g.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn reward_table() {
        assert_eq!(ids_reward(1, 1), 1.0);
        assert_eq!(ids_reward(0, 0), 0.0);
        assert_eq!(ids_reward(1, 0), -1.0);
        assert_eq!(ids_reward(0, 1), -1.0);
    }

    #[test]
    fn two_rows_give_one_full_and_one_terminal() {
        let rows = vec![LabeledTuple::benign([0.5; 48]), LabeledTuple::malicious([0.1; 48])];
        let tr = encode_transitions(&rows).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[0].next, Some(1));
        assert_eq!(tr[1].next, None);
        assert!(encode_transitions(&rows[..1]).is_err());
    }

    #[test]
    fn minibatches_partition_the_epoch() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let batches = minibatches(1024, 64, &mut rng);
        assert_eq!(batches.len(), 16);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1024).collect::<Vec<_>>());
    }

    #[test]
    fn gae_trivial_cases() {
        assert_eq!(gae(&[1.0], &[0.0, 0.0], 0.9, 1.0).unwrap(), vec![1.0]);
        let adv = gae(&[0.0; 4], &[2.5; 5], 1.0, 1.0).unwrap();
        assert!(adv.iter().all(|a| *a == 0.0));
        assert!(gae(&[1.0], &[0.0], 0.9, 1.0).is_err());
    }

    fn loss_value(new: &[f64], old: &[f64], adv: &[f64], eps: f64) -> f64 {
        let mut g = Graph::new();
        let n = g.input(Tensor::column(new.to_vec()));
        let l = ppo_policy_loss(&mut g, n, old, adv, eps).unwrap();
        g.value(l).item()
    }

    #[test]
    fn ppo_loss_examples() {
        let adv = [0.5, -1.0, 2.0];
        let lp = [-0.3, -1.2, -0.01];
        assert!((loss_value(&lp, &lp, &adv, 0.2) + (0.5 - 1.0 + 2.0) / 3.0).abs() < 1e-12);
        // ratio 2 with positive advantage is capped at 1.2
        let l = loss_value(&[2f64.ln()], &[0.0], &[3.0], 0.2);
        assert!((l + 1.2 * 3.0).abs() < 1e-12);
        assert_eq!(loss_value(&lp, &[0.0; 3], &[0.0; 3], 0.2), 0.0);
    }

    #[test]
    fn critic_loss_examples() {
        let mut g = Graph::new();
        let v = g.input(Tensor::column(vec![1.0, 2.0, 3.0]));
        let zero = critic_loss(&mut g, v, &[1.0, 2.0, 3.0]).unwrap();
        let shifted = critic_loss(&mut g, v, &[1.5, 2.5, 3.5]).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
        assert!((g.value(shifted).item() - 0.25).abs() < 1e-15);
    }
}
