use std::collections::HashMap;

use super::AnalysisError;
use crate::env::AssemblyEnv;
use crate::flowmodel::ModelError;
use crate::policy::Policy;
use crate::reward::Scorer;
use crate::scalar::Scalar;

/// Exact state flows of an enumerable environment.
///
/// `F(x) = max(R(x), floor)` at terminals (the reward the loss sees) and
/// `F(s) = Σ F(child)` elsewhere. The induced policy `F(child) / F(s)` has
/// zero trajectory-balance loss and samples terminals in proportion to `F`.
#[derive(Debug, Clone)]
pub struct ExactFlows {
    /// Flow of every state, keyed by its token prefix (the root is `[]`).
    pub flows: HashMap<Vec<usize>, f64>,
    /// Terminal sequences in enumeration order with their raw rewards.
    pub terminals: Vec<(Vec<usize>, f64)>,
}

impl ExactFlows {
    pub fn log_z(&self) -> f64 {
        self.flows[&Vec::new()].ln()
    }

    /// Probability of each terminal under the flow policy, in enumeration order.
    pub fn terminal_probabilities(&self) -> Vec<f64> {
        let z = self.flows[&Vec::new()];
        self.terminals.iter().map(|(s, _)| self.flows[s] / z).collect()
    }

    /// Tabular policy with logits `log F(child)` (masked entries are 0).
    pub fn policy<T: Scalar>(&self, env: &AssemblyEnv) -> TabularPolicy<T> {
        let v = env.vocab_size();
        let mut logits = HashMap::new();
        for (prefix, _) in self.flows.iter().filter(|(p, _)| p.len() < env.horizon()) {
            let mut row = vec![T::zero(); v];
            let mut child = prefix.clone();
            child.push(0);
            for &a in &env.slots()[prefix.len()].compatible {
                *child.last_mut().expect("pushed") = a;
                row[a] = T::of(self.flows[&child].ln());
            }
            logits.insert(prefix.clone(), row);
        }
        TabularPolicy {
            logits,
            log_z: T::of(self.log_z()),
            fallback: vec![T::zero(); v],
        }
    }
}

/// Computes flows by enumeration. Refuses environments with more than
/// `bound` terminals.
pub fn exact_flows(env: &AssemblyEnv, scorer: &Scorer, bound: u128) -> Result<ExactFlows, AnalysisError> {
    let seqs = env.enumerate_terminals(bound)?;
    let rewards: Vec<f64> = scorer.score_batch(env, &seqs).into_iter().map(|s| s.reward).collect();
    let spec = scorer.spec();
    let mut flows: HashMap<Vec<usize>, f64> = HashMap::new();
    for (s, &r) in seqs.iter().zip(&rewards) {
        let f = spec.loss_reward(r);
        flows.insert(s.clone(), f);
        for l in 0..s.len() {
            *flows.entry(s[..l].to_vec()).or_insert(0.0) += f;
        }
    }
    Ok(ExactFlows {
        flows,
        terminals: seqs.into_iter().zip(rewards).collect(),
    })
}

/// A policy given by a table of logits per prefix.
#[derive(Debug, Clone)]
pub struct TabularPolicy<T> {
    logits: HashMap<Vec<usize>, Vec<T>>,
    log_z: T,
    fallback: Vec<T>,
}

impl<T: Scalar> Policy<T> for TabularPolicy<T> {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.fallback.len()
    }

    fn initial(&self) -> Result<Vec<usize>, ModelError> {
        Ok(Vec::new())
    }

    fn logits<'a>(&'a self, state: &'a Vec<usize>) -> &'a [T] {
        self.logits.get(state).unwrap_or(&self.fallback)
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> Result<Vec<usize>, ModelError> {
        let mut next = state.clone();
        next.push(token);
        Ok(next)
    }

    fn log_z(&self) -> T {
        self.log_z
    }
}
