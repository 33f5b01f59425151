//! Continuous environments and builtin environment constructors.
//!
//! Continuous dynamics are deterministic maps from `(s, a)` to a state
//! change plus additive Gaussian noise; rewards likewise. States and
//! actions are clamped to box bounds. Termination is hard-coded per
//! environment (the builtins here only truncate at the horizon).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Deterministic part of the state change `(s, a) -> delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Dynamics {
    /// `delta = A s + B a` with row-major matrices.
    Linear { a: Vec<f64>, b: Vec<f64> },
}

/// Deterministic part of the reward `(s, a) -> r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RewardMap {
    /// `r = ws . s + wa . a + bias`
    Linear { ws: Vec<f64>, wa: Vec<f64>, bias: f64 },
    /// `r = -(ws . s^2 + wa . a^2)`, a quadratic cost.
    NegQuadratic { ws: Vec<f64>, wa: Vec<f64> },
}

/// Initial-state sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum InitSampler {
    UniformBox { lo: f64, hi: f64 },
    Fixed(Vec<f64>),
}

/// A small continuous-state environment with Gaussian transition and
/// reward noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuousEnv {
    pub id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dynamics: Dynamics,
    pub reward: RewardMap,
    pub dyn_noise_std: f64,
    pub reward_noise_std: f64,
    pub gamma: f64,
    pub max_steps: usize,
    pub state_bounds: (f64, f64),
    pub action_bounds: (f64, f64),
    pub init: InitSampler,
}

impl ContinuousEnv {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.dyn_noise_std < 0.0 || self.reward_noise_std < 0.0 {
            return Err(Error::InvalidModel("negative noise std".into()));
        }
        if self.state_bounds.0 >= self.state_bounds.1 || self.action_bounds.0 >= self.action_bounds.1 {
            return Err(Error::InvalidModel("empty state or action box".into()));
        }
        match &self.dynamics {
            Dynamics::Linear { a, b } => {
                if a.len() != self.state_dim * self.state_dim || b.len() != self.state_dim * self.action_dim {
                    return Err(Error::InvalidModel("dynamics matrix shape mismatch".into()));
                }
            }
        }
        Ok(())
    }

    /// Deterministic state change before noise.
    pub fn mean_delta(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Linear { a: am, b: bm } => (0..self.state_dim)
                .map(|i| {
                    let row_a = &am[i * self.state_dim..][..self.state_dim];
                    let row_b = &bm[i * self.action_dim..][..self.action_dim];
                    row_a.iter().zip(s).map(|(w, x)| w * x).sum::<f64>()
                        + row_b.iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect(),
        }
    }

    /// Deterministic reward before noise.
    pub fn mean_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        match &self.reward {
            RewardMap::Linear { ws, wa, bias } => {
                ws.iter().zip(s).map(|(w, x)| w * x).sum::<f64>()
                    + wa.iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
                    + bias
            }
            RewardMap::NegQuadratic { ws, wa } => {
                -(ws.iter().zip(s).map(|(w, x)| w * x * x).sum::<f64>()
                    + wa.iter().zip(a).map(|(w, x)| w * x * x).sum::<f64>())
            }
        }
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.init {
            InitSampler::UniformBox { lo, hi } => (0..self.state_dim).map(|_| rng.gen_range(*lo..*hi)).collect(),
            InitSampler::Fixed(v) => v.clone(),
        }
    }

    /// One environment step: clamps the action, applies the noisy change,
    /// clamps the next state. Never terminates early.
    pub fn step<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], rng: &mut R) -> (f64, Vec<f64>) {
        let a: Vec<f64> = a.iter().map(|x| x.clamp(self.action_bounds.0, self.action_bounds.1)).collect();
        let mut delta = self.mean_delta(s, &a);
        if self.dyn_noise_std > 0.0 {
            let noise = Normal::new(0.0, self.dyn_noise_std).expect("valid normal");
            for d in delta.iter_mut() {
                *d += noise.sample(rng);
            }
        }
        let s_next: Vec<f64> = s
            .iter()
            .zip(&delta)
            .map(|(x, d)| (x + d).clamp(self.state_bounds.0, self.state_bounds.1))
            .collect();
        let mut r = self.mean_reward(s, &a);
        if self.reward_noise_std > 0.0 {
            r += Normal::new(0.0, self.reward_noise_std).expect("valid normal").sample(rng);
        }
        (r, s_next)
    }
}

/// 1-D linear-Gaussian environment: `delta = a_coef * s + b_coef * u`,
/// `r = wr_s * s + wr_a * u` with additive Gaussian noise on both.
#[allow(clippy::too_many_arguments)]
pub fn lin1d(
    a_coef: f64,
    b_coef: f64,
    dyn_noise_std: f64,
    reward_noise_std: f64,
    gamma: f64,
    max_steps: usize,
) -> ContinuousEnv {
    ContinuousEnv {
        id: "lin1d".into(),
        state_dim: 1,
        action_dim: 1,
        dynamics: Dynamics::Linear { a: vec![a_coef], b: vec![b_coef] },
        reward: RewardMap::Linear { ws: vec![0.4], wa: vec![0.2], bias: 0.1 },
        dyn_noise_std,
        reward_noise_std,
        gamma,
        max_steps,
        state_bounds: (-5.0, 5.0),
        action_bounds: (-1.0, 1.0),
        init: InitSampler::UniformBox { lo: -1.0, hi: 1.0 },
    }
}

/// A stochastic chain of `n` states with `right`/`left` actions: moving
/// right succeeds with probability `p_fwd`, stalls with `p_stay` and slips
/// back otherwise; the far end pays `reward_hi`, the start pays
/// `reward_lo`. Exploration towards the far end is what a behaviour policy
/// biased to the left under-samples.
#[allow(clippy::too_many_arguments)]
pub fn chain_mdp(
    n_states: usize,
    p_fwd: f64,
    p_stay: f64,
    reward_lo: f64,
    reward_hi: f64,
    reward_std: f64,
    gamma: f64,
    max_steps: usize,
) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(Error::InvalidModel("chain needs at least 2 states".into()));
    }
    if p_fwd < 0.0 || p_stay < 0.0 || p_fwd + p_stay > 1.0 {
        return Err(Error::InvalidModel("chain probabilities invalid".into()));
    }
    let n_actions = 2; // 0 = left, 1 = right
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    let p_back = 1.0 - p_fwd - p_stay;
    for s in 0..n_states {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n_states - 1);
        {
            // action 0: move left deterministically
            let row = &mut transition[(s * n_actions) * n_states..][..n_states];
            row[left] = 1.0;
        }
        {
            // action 1: noisy move right
            let row = &mut transition[(s * n_actions + 1) * n_states..][..n_states];
            row[right] += p_fwd;
            row[s] += p_stay;
            row[left] += p_back;
        }
        if s == 0 {
            reward[s * n_actions] = reward_lo;
        }
        if s == n_states - 1 {
            reward[s * n_actions + 1] = reward_hi;
        }
    }
    let mut init = vec![0.0; n_states];
    init[0] = 1.0;
    TabularMdp::new(n_states, n_actions, transition, reward, reward_std, gamma, init, max_steps)
}

/// Dense random MDP with strictly positive transition probabilities; used
/// by the benchmark suites and tests.
#[allow(clippy::too_many_arguments)]
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    reward_std: f64,
    gamma: f64,
    max_steps: usize,
    seed: u64,
) -> TabularMdp {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_prob_row(n_states, &mut rng));
    }
    let reward_mean: Vec<f64> = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
    let init = random_prob_row(n_states, &mut rng);
    TabularMdp::new(n_states, n_actions, transition, reward_mean, reward_std, gamma, init, max_steps)
        .expect("random MDP is valid")
}

fn random_prob_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    let resid: f64 = 1.0 - row.iter().sum::<f64>();
    let last = row.len() - 1;
    row[last] += resid;
    row
}

/// Single-state bandit with one reward mean per arm.
pub fn bandit_mdp(arm_means: &[f64], reward_std: f64, gamma: f64, max_steps: usize) -> Result<TabularMdp> {
    let n_actions = arm_means.len();
    if n_actions == 0 {
        return Err(Error::InvalidModel("bandit needs at least one arm".into()));
    }
    TabularMdp::new(
        1,
        n_actions,
        vec![1.0; n_actions],
        arm_means.to_vec(),
        reward_std,
        gamma,
        vec![1.0],
        max_steps,
    )
}

/// Builtin tabular environments addressable by name from configs.
pub fn builtin_tabular(name: &str) -> Result<TabularMdp> {
    match name {
        // the fixed 5-state benchmark used throughout the tabular suites
        "chain5" => chain_mdp(5, 0.35, 0.6, 0.05, 1.0, 0.2, 0.9, 40),
        "bandit2" => bandit_mdp(&[0.2, 0.8], 0.3, 0.5, 20),
        other => Err(Error::Domain(format!("unknown builtin tabular environment '{other}'"))),
    }
}

/// Builtin continuous environments addressable by name from configs.
pub fn builtin_continuous(name: &str) -> Result<ContinuousEnv> {
    match name {
        "lin1d" => Ok(lin1d(-0.3, 0.5, 0.02, 0.05, 0.95, 50)),
        other => Err(Error::Domain(format!("unknown builtin continuous environment '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_rows_are_stochastic() {
        let mdp = chain_mdp(5, 0.35, 0.6, 0.05, 1.0, 0.2, 0.9, 40).unwrap();
        assert_eq!(mdp.n_states(), 5);
        for s in 0..5 {
            for a in 0..2 {
                let sum: f64 = mdp.transition_row(s, a).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_optimum_goes_right() {
        let mdp = builtin_tabular("chain5").unwrap();
        let (_, policy) = crate::mdp::value_iteration(&mdp, 1e-10).unwrap();
        // from the start the optimal action is to head for the far end
        assert_eq!(policy.action_probs(0)[1], 1.0);
    }

    #[test]
    fn lin1d_step_is_deterministic_without_noise() {
        let env = lin1d(-0.3, 0.5, 0.0, 0.0, 0.95, 50);
        env.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (r, s2) = env.step(&[1.0], &[0.5], &mut rng);
        assert!((s2[0] - (1.0 + (-0.3 + 0.25))).abs() < 1e-12);
        assert!((r - (0.4 + 0.1 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn random_mdp_is_valid_and_seeded() {
        let a = random_mdp(4, 2, 0.1, 0.9, 30, 5);
        let b = random_mdp(4, 2, 0.1, 0.9, 30, 5);
        assert_eq!(a.transition_row(0, 0), b.transition_row(0, 0));
    }
}
