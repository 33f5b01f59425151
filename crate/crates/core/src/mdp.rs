//! Exact tabular MDPs: representation, optimal planning, policy evaluation
//! and regret accounting. These are the verification oracles for everything
//! built on top of them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Gaussian rewards are nominally unbounded; the bounded-reward quantities
/// (`r_min`, `r_max`) are derived as the reward-mean extrema widened by this
/// many noise standard deviations.
pub const REWARD_CLIP_SIGMAS: f64 = 4.0;

/// A finite MDP with a dense transition tensor, Gaussian rewards with a
/// shared known noise level and a fixed episode horizon for sampled rollouts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `(s, a, s')` transition probabilities.
    transition: Vec<f64>,
    /// Mean reward per `(s, a)`.
    reward_mean: Vec<f64>,
    /// Shared aleatoric reward noise.
    reward_std: f64,
    gamma: f64,
    initial_dist: Vec<f64>,
    max_steps: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_std: f64,
        gamma: f64,
        initial_dist: Vec<f64>,
        max_steps: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("empty state or action space".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidModel(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward_mean.len() != n_states * n_actions {
            return Err(Error::InvalidModel("reward tensor shape mismatch".into()));
        }
        if initial_dist.len() != n_states {
            return Err(Error::InvalidModel("initial distribution shape mismatch".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel(format!("gamma {gamma} outside [0, 1)")));
        }
        if !(reward_std >= 0.0) {
            return Err(Error::InvalidModel(format!("reward std {reward_std} negative")));
        }
        if max_steps == 0 {
            return Err(Error::InvalidModel("max_steps must be at least 1".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                check_prob_row(row, &format!("transition row (s={s}, a={a})"))?;
            }
        }
        check_prob_row(&initial_dist, "initial distribution")?;
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("non-finite reward mean".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward_mean,
            reward_std,
            gamma,
            initial_dist,
            max_steps,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_std(&self) -> f64 {
        self.reward_std
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn reward_mean(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.n_actions + a]
    }

    pub fn reward_means(&self) -> &[f64] {
        &self.reward_mean
    }

    /// Derived reward bounds: reward-mean extrema widened by
    /// [`REWARD_CLIP_SIGMAS`] noise standard deviations.
    pub fn reward_bounds(&self) -> (f64, f64) {
        let lo = self.reward_mean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.reward_mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (
            lo - REWARD_CLIP_SIGMAS * self.reward_std,
            hi + REWARD_CLIP_SIGMAS * self.reward_std,
        )
    }

    /// Maximum possible regret `(r_max - r_min) / (1 - gamma)`.
    pub fn max_regret(&self) -> f64 {
        let (lo, hi) = self.reward_bounds();
        (hi - lo) / (1.0 - self.gamma)
    }

    /// Reward-mean extrema, the per-step normalisation constants used in
    /// test mode (no noise widening).
    pub fn reward_mean_extrema(&self) -> (f64, f64) {
        let lo = self.reward_mean.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.reward_mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn check_prob_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// A Markov policy: a row-stochastic action matrix for tabular environments
/// or a linear-Gaussian controller for continuous ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    Tabular {
        n_states: usize,
        n_actions: usize,
        /// Row-major `(s, a)` action probabilities.
        probs: Vec<f64>,
    },
    Linear {
        state_dim: usize,
        action_dim: usize,
        /// Row-major `action_dim x (state_dim + 1)` weights; the trailing
        /// column is a bias.
        weights: Vec<f64>,
        exploration_std: f64,
    },
}

impl PolicySpec {
    pub fn tabular(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::InvalidModel("policy matrix shape mismatch".into()));
        }
        for s in 0..n_states {
            check_prob_row(&probs[s * n_actions..][..n_actions], &format!("policy row (s={s})"))?;
        }
        Ok(PolicySpec::Tabular { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicySpec::Tabular {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != n_states {
            return Err(Error::InvalidModel("one action per state required".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidModel(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(PolicySpec::Tabular { n_states, n_actions, probs })
    }

    pub fn linear(state_dim: usize, action_dim: usize, weights: Vec<f64>, exploration_std: f64) -> Result<Self> {
        if weights.len() != action_dim * (state_dim + 1) {
            return Err(Error::InvalidModel("linear policy weight shape mismatch".into()));
        }
        if !(exploration_std >= 0.0) {
            return Err(Error::InvalidModel("negative exploration std".into()));
        }
        Ok(PolicySpec::Linear { state_dim, action_dim, weights, exploration_std })
    }

    pub fn action_probs(&self, s: usize) -> &[f64] {
        match self {
            PolicySpec::Tabular { n_actions, probs, .. } => &probs[s * n_actions..][..*n_actions],
            PolicySpec::Linear { .. } => panic!("action_probs on a continuous policy"),
        }
    }

    /// Mean action of a linear policy (before exploration noise).
    pub fn linear_mean_action(&self, state: &[f64]) -> Vec<f64> {
        match self {
            PolicySpec::Linear { state_dim, action_dim, weights, .. } => {
                assert_eq!(state.len(), *state_dim);
                let cols = state_dim + 1;
                (0..*action_dim)
                    .map(|i| {
                        let row = &weights[i * cols..][..cols];
                        row[..*state_dim].iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + row[*state_dim]
                    })
                    .collect()
            }
            PolicySpec::Tabular { .. } => panic!("linear_mean_action on a tabular policy"),
        }
    }

    pub fn sample_tabular_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let probs = self.action_probs(s);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// Sample an index from a probability row.
pub fn sample_categorical<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Exact value iteration.
///
/// The returned value function has Bellman optimality residual at most `tol`
/// in sup-norm and the policy is greedy with respect to it (ties broken by
/// the lowest action index).
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(Vec<f64>, PolicySpec)> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let gamma = mdp.gamma();
    // Stop when successive iterates differ by at most this, which implies a
    // residual below tol and a greedy-policy value gap below tol as well.
    let stop = tol * (1.0 - gamma) / 2.0;
    let (r_lo, r_hi) = mdp.reward_bounds();
    let span = (r_hi - r_lo).max(1e-300);
    let cap = if gamma <= f64::EPSILON {
        2
    } else {
        let bound = ((stop * (1.0 - gamma) / span).ln() / gamma.ln()).ceil();
        bound.max(1.0) as usize + 64
    };

    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..cap {
        let mut diff: f64 = 0.0;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions() {
                let q = mdp.reward_mean(s, a)
                    + gamma
                        * mdp
                            .transition_row(s, a)
                            .iter()
                            .zip(&v)
                            .map(|(p, vv)| p * vv)
                            .sum::<f64>();
                if q > best {
                    best = q;
                }
            }
            next[s] = best;
            diff = diff.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if diff <= stop {
            let mut actions = vec![0usize; n];
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for a in 0..mdp.n_actions() {
                    let q = mdp.reward_mean(s, a)
                        + gamma
                            * mdp
                                .transition_row(s, a)
                                .iter()
                                .zip(&v)
                                .map(|(p, vv)| p * vv)
                                .sum::<f64>();
                    if q > best {
                        best = q;
                        best_a = a;
                    }
                }
                actions[s] = best_a;
            }
            let policy = PolicySpec::deterministic(n, mdp.n_actions(), &actions)?;
            return Ok((v, policy));
        }
    }
    Err(Error::Numeric(format!(
        "value iteration did not reach tolerance {tol} within {cap} iterations"
    )))
}

/// Per-state values of a policy from the exact linear Bellman solve.
pub fn policy_state_values(mdp: &TabularMdp, policy: &PolicySpec) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    match policy {
        PolicySpec::Tabular { n_states, n_actions, .. } => {
            if *n_states != n || *n_actions != mdp.n_actions() {
                return Err(Error::InvalidModel("policy/MDP dimension mismatch".into()));
            }
        }
        PolicySpec::Linear { .. } => {
            return Err(Error::InvalidModel("tabular evaluation of a continuous policy".into()));
        }
    }
    let mut p_pi = DMatrix::<f64>::zeros(n, n);
    let mut r_pi = DVector::<f64>::zeros(n);
    for s in 0..n {
        let probs = policy.action_probs(s);
        for a in 0..mdp.n_actions() {
            let pa = probs[a];
            if pa == 0.0 {
                continue;
            }
            r_pi[s] += pa * mdp.reward_mean(s, a);
            for (s2, pt) in mdp.transition_row(s, a).iter().enumerate() {
                p_pi[(s, s2)] += pa * pt;
            }
        }
    }
    let system = DMatrix::<f64>::identity(n, n) - mdp.gamma() * p_pi;
    let v = system
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::Numeric("singular Bellman system".into()))?;
    Ok(v.iter().cloned().collect())
}

/// Expected discounted return of `policy` from the initial distribution,
/// via the exact linear Bellman solve.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &PolicySpec) -> Result<f64> {
    let v = policy_state_values(mdp, policy)?;
    Ok(v.iter().zip(mdp.initial_dist()).map(|(vv, p)| vv * p).sum())
}

/// Optimal expected return from the initial distribution.
pub fn optimal_return(mdp: &TabularMdp) -> Result<f64> {
    let (v, _) = value_iteration(mdp, 1e-12)?;
    Ok(v.iter().zip(mdp.initial_dist()).map(|(vv, p)| vv * p).sum())
}

/// Exact regret of `policy`: optimal return minus the policy's return.
/// Numerical negatives within 1e-9 are clamped to zero.
pub fn true_regret(mdp: &TabularMdp, policy: &PolicySpec) -> Result<f64> {
    let best = optimal_return(mdp)?;
    let j = policy_evaluation(mdp, policy)?;
    let regret = best - j;
    if regret < 0.0 {
        if regret > -1e-9 {
            return Ok(0.0);
        }
        return Err(Error::Numeric(format!("regret {regret} below clamp window")));
    }
    Ok(regret)
}

/// Enumerate all deterministic policies of a small MDP. Intended for
/// brute-force oracles in tests; the count grows as `A^S`.
pub fn enumerate_deterministic_policies(n_states: usize, n_actions: usize) -> Vec<PolicySpec> {
    let total = n_actions.pow(n_states as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let mut actions = vec![0usize; n_states];
        for slot in actions.iter_mut() {
            *slot = c % n_actions;
            c /= n_actions;
        }
        out.push(PolicySpec::deterministic(n_states, n_actions, &actions).expect("valid policy"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state_mdp(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward], 0.0, gamma, vec![1.0], 10).unwrap()
    }

    pub(crate) fn random_mdp(n_states: usize, n_actions: usize, seed: u64) -> TabularMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let mut row: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 0.05).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            // Re-normalise exactly so the invariant check passes.
            let sum2: f64 = row.iter().sum();
            let last = row.len() - 1;
            row[last] += 1.0 - sum2;
            transition.extend(row);
        }
        let reward_mean: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
        let mut init: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = init.iter().sum();
        init.iter_mut().for_each(|p| *p /= s);
        let s2: f64 = init.iter().sum();
        let last = init.len() - 1;
        init[last] += 1.0 - s2;
        TabularMdp::new(n_states, n_actions, transition, reward_mean, 0.1, 0.9, init, 50).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![1.0], 0.0, 0.5, vec![1.0], 10);
        assert!(err.is_err());
        let err = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.0, 1.0, vec![1.0], 10);
        assert!(err.is_err());
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = single_state_mdp(1.0, 0.5);
        let (v, _) = value_iteration(&mdp, 1e-10).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn value_iteration_myopic_at_gamma_zero() {
        // two-state deterministic chain, rewards (0, 1), gamma = 0
        let transition = vec![
            0.0, 1.0, // s0 -> s1
            1.0, 0.0, // s1 -> s0
        ];
        let mdp =
            TabularMdp::new(2, 1, transition, vec![0.0, 1.0], 0.0, 0.0, vec![1.0, 0.0], 10).unwrap();
        let (v, _) = value_iteration(&mdp, 1e-10).unwrap();
        assert!((v[0] - 0.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_iteration_matches_policy_evaluation_oracle() {
        // linear-solve policy evaluation of the returned greedy policy
        for seed in 0..5 {
            let mdp = random_mdp(5, 3, seed);
            let tol = 1e-9;
            let (v, policy) = value_iteration(&mdp, tol).unwrap();
            let exact = policy_state_values(&mdp, &policy).unwrap();
            for s in 0..5 {
                assert!(
                    (v[s] - exact[s]).abs() <= tol,
                    "seed {seed} state {s}: {} vs {}",
                    v[s],
                    exact[s]
                );
            }
        }
    }

    #[test]
    fn policy_evaluation_closed_forms() {
        let mdp = single_state_mdp(1.0, 0.5);
        let uniform = PolicySpec::uniform(1, 1);
        assert!((policy_evaluation(&mdp, &uniform).unwrap() - 2.0).abs() < 1e-12);

        // deterministic self-loop, reward r, discount gamma -> r / (1 - gamma)
        let mdp = single_state_mdp(-3.0, 0.9);
        let j = policy_evaluation(&mdp, &PolicySpec::uniform(1, 1)).unwrap();
        assert!((j - (-30.0)).abs() < 1e-9);
    }

    #[test]
    fn true_regret_properties() {
        let mdp = random_mdp(4, 2, 3);
        let (_, optimal) = value_iteration(&mdp, 1e-11).unwrap();
        assert_eq!(true_regret(&mdp, &optimal).unwrap(), 0.0);
        let uniform = PolicySpec::uniform(4, 2);
        assert!(true_regret(&mdp, &uniform).unwrap() >= 0.0);
    }

    #[test]
    fn true_regret_matches_enumeration_oracle() {
        // brute-force enumeration over all deterministic policies
        let mdp = random_mdp(3, 2, 17);
        let uniform = PolicySpec::uniform(3, 2);
        let j_uniform = policy_evaluation(&mdp, &uniform).unwrap();
        let best_enumerated = enumerate_deterministic_policies(3, 2)
            .iter()
            .map(|p| policy_evaluation(&mdp, p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let expected = best_enumerated - j_uniform;
        let got = true_regret(&mdp, &uniform).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    #[test]
    fn optimal_value_dominates_enumerated_policies() {
        for seed in [0, 1, 2] {
            let mdp = random_mdp(4, 2, seed);
            let (v, _) = value_iteration(&mdp, 1e-10).unwrap();
            let j_opt: f64 = v.iter().zip(mdp.initial_dist()).map(|(a, b)| a * b).sum();
            for p in enumerate_deterministic_policies(4, 2) {
                let j = policy_evaluation(&mdp, &p).unwrap();
                assert!(j <= j_opt + 1e-8);
            }
        }
    }

    #[test]
    fn regret_invariant_to_reward_shift() {
        let mdp = random_mdp(4, 2, 23);
        let policy = PolicySpec::uniform(4, 2);
        let base = true_regret(&mdp, &policy).unwrap();
        let shift = 2.5;
        let shifted = TabularMdp::new(
            4,
            2,
            mdp.transition.clone(),
            mdp.reward_mean.iter().map(|r| r + shift).collect(),
            mdp.reward_std,
            mdp.gamma,
            mdp.initial_dist.clone(),
            mdp.max_steps,
        )
        .unwrap();
        let shifted_regret = true_regret(&shifted, &policy).unwrap();
        assert!((base - shifted_regret).abs() < 1e-8);
    }

    #[test]
    fn categorical_sampling_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let row = [0.2, 0.5, 0.3];
        for _ in 0..100 {
            assert!(sample_categorical(&row, &mut rng) < 3);
        }
    }
}
