//! A common simulation interface over tabular MDPs, continuous
//! environments and learned world models, plus rollout and dataset
//! generation built on top of it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Action, Dataset, DatasetHeader, State, Transition};
use crate::env::ContinuousEnv;
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, PolicySpec, TabularMdp};

/// Anything a policy can be rolled out in. Episode truncation at
/// `max_steps` is handled by the drivers; `step` only reports environment
/// termination.
pub trait Simulator {
    fn env_id(&self) -> String;
    fn is_discrete(&self) -> bool;
    fn gamma(&self) -> f64;
    fn max_steps(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng) -> State;
    /// Returns `(reward, next state, terminal)`.
    fn step(&self, s: &State, a: &Action, rng: &mut ChaCha8Rng) -> (f64, State, bool);
    fn header(&self) -> DatasetHeader;
}

impl Simulator for TabularMdp {
    fn env_id(&self) -> String {
        "tabular".into()
    }

    fn is_discrete(&self) -> bool {
        true
    }

    fn gamma(&self) -> f64 {
        TabularMdp::gamma(self)
    }

    fn max_steps(&self) -> usize {
        TabularMdp::max_steps(self)
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> State {
        State::Discrete(sample_categorical(self.initial_dist(), rng))
    }

    fn step(&self, s: &State, a: &Action, rng: &mut ChaCha8Rng) -> (f64, State, bool) {
        let (si, ai) = (s.index(), a.index());
        let next = sample_categorical(self.transition_row(si, ai), rng);
        let mut r = self.reward_mean(si, ai);
        if self.reward_std() > 0.0 {
            r += Normal::new(0.0, self.reward_std()).expect("valid normal").sample(rng);
        }
        (r, State::Discrete(next), false)
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader {
            env_id: self.env_id(),
            discrete: true,
            state_dim: self.n_states(),
            action_dim: self.n_actions(),
            gamma: TabularMdp::gamma(self),
            max_steps: TabularMdp::max_steps(self),
            behavior: String::new(),
            seed: 0,
        }
    }
}

impl Simulator for ContinuousEnv {
    fn env_id(&self) -> String {
        self.id.clone()
    }

    fn is_discrete(&self) -> bool {
        false
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> State {
        State::Continuous(self.sample_initial(rng))
    }

    fn step(&self, s: &State, a: &Action, rng: &mut ChaCha8Rng) -> (f64, State, bool) {
        let (r, s_next) = ContinuousEnv::step(self, s.vector(), a.vector(), rng);
        (r, State::Continuous(s_next), false)
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader {
            env_id: self.id.clone(),
            discrete: false,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            gamma: self.gamma,
            max_steps: self.max_steps,
            behavior: String::new(),
            seed: 0,
        }
    }
}

/// Draw an action from `policy` at `s`, adding exploration noise for
/// linear policies.
pub fn sample_action(policy: &PolicySpec, s: &State, rng: &mut ChaCha8Rng) -> Action {
    match policy {
        PolicySpec::Tabular { .. } => Action::Discrete(policy.sample_tabular_action(s.index(), rng)),
        PolicySpec::Linear { exploration_std, .. } => {
            let mut a = policy.linear_mean_action(s.vector());
            if *exploration_std > 0.0 {
                let noise = Normal::new(0.0, *exploration_std).expect("valid normal");
                for x in a.iter_mut() {
                    *x += noise.sample(rng);
                }
            }
            Action::Continuous(a)
        }
    }
}

/// Roll `policy` out for at most `horizon` steps (ending early on
/// environment termination) and return the discounted and undiscounted
/// returns. Deterministic given the seed.
pub fn rollout<S: Simulator + ?Sized>(
    sim: &S,
    policy: &PolicySpec,
    gamma: f64,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout_with_rng(sim, policy, gamma, horizon, &mut rng)
}

/// [`rollout`] reusing an existing RNG stream.
pub fn rollout_with_rng<S: Simulator + ?Sized>(
    sim: &S,
    policy: &PolicySpec,
    gamma: f64,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if horizon == 0 {
        return Err(Error::Domain("rollout horizon must be at least 1".into()));
    }
    let mut s = sim.reset(rng);
    let mut disc = 0.0;
    let mut undisc = 0.0;
    let mut g = 1.0;
    for _ in 0..horizon {
        let a = sample_action(policy, &s, rng);
        let (r, s_next, terminal) = sim.step(&s, &a, rng);
        disc += g * r;
        undisc += r;
        g *= gamma;
        s = s_next;
        if terminal {
            break;
        }
    }
    Ok((disc, undisc))
}

/// Sample a dataset of exactly `n` transitions, resetting episodes through
/// the environment's initial distribution. Each episode draws its behaviour
/// policy uniformly from `behaviors`, so mixtures of collecting policies
/// are supported. The `done` flag marks episode ends (termination or the
/// horizon); a final partial episode keeps `done = false`.
pub fn sample_dataset<S: Simulator + ?Sized>(
    sim: &S,
    behaviors: &[PolicySpec],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    use rand::SeedableRng;
    if behaviors.is_empty() {
        return Err(Error::Domain("at least one behaviour policy required".into()));
    }
    if n == 0 {
        return Err(Error::Domain("dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n);
    let horizon = sim.max_steps();
    'outer: loop {
        let policy = &behaviors[rng.gen_range(0..behaviors.len())];
        let mut s = sim.reset(&mut rng);
        for t in 0..horizon {
            let a = sample_action(policy, &s, &mut rng);
            let (r, s_next, terminal) = sim.step(&s, &a, &mut rng);
            let last_of_episode = terminal || t + 1 == horizon;
            let full = transitions.len() + 1 == n;
            transitions.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: s_next.clone(),
                done: last_of_episode,
            });
            if full {
                break 'outer;
            }
            if last_of_episode {
                break;
            }
            s = s_next;
        }
    }
    let mut header = sim.header();
    header.seed = seed;
    header.behavior = if behaviors.len() == 1 { "single".into() } else { format!("mixture-{}", behaviors.len()) };
    Dataset::new(header, transitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{lin1d, random_mdp};
    use crate::mdp::policy_evaluation;

    #[test]
    fn single_transition_dataset() {
        let mdp = random_mdp(3, 2, 0.0, 0.9, 10, 1);
        let ds = sample_dataset(&mdp, &[PolicySpec::uniform(3, 2)], 1, 0).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn same_seed_identical_datasets() {
        let mdp = random_mdp(3, 2, 0.3, 0.9, 10, 1);
        let p = PolicySpec::uniform(3, 2);
        let a = sample_dataset(&mdp, &[p.clone()], 500, 9).unwrap();
        let b = sample_dataset(&mdp, &[p], 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_frequencies_match_transition_rows() {
        // law-of-large-numbers oracle on a 2-state MDP
        let mdp = random_mdp(2, 1, 0.0, 0.9, 50, 4);
        let ds = sample_dataset(&mdp, &[PolicySpec::uniform(2, 1)], 100_000, 7).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for t in &ds.transitions {
            counts[t.s.index()][t.s_next.index()] += 1;
        }
        for s in 0..2 {
            let total: usize = counts[s].iter().sum();
            for s2 in 0..2 {
                let e = counts[s][s2] as f64 / total as f64;
                let p = mdp.transition_row(s, 0)[s2];
                assert!((e - p).abs() < 0.01, "empirical {e} vs true {p}");
            }
        }
    }

    #[test]
    fn rollout_horizon_one_is_single_step_reward() {
        let mdp = random_mdp(3, 2, 0.0, 0.9, 10, 2);
        let p = PolicySpec::uniform(3, 2);
        let (disc, undisc) = rollout(&mdp, &p, 0.9, 1, 3).unwrap();
        assert_eq!(disc, undisc);
    }

    #[test]
    fn deterministic_env_and_policy_identical_across_seeds() {
        let env = lin1d(-0.3, 0.5, 0.0, 0.0, 0.95, 20);
        let mut env = env;
        env.init = crate::env::InitSampler::Fixed(vec![0.5]);
        let p = PolicySpec::linear(1, 1, vec![0.2, 0.0], 0.0).unwrap();
        let (a, _) = rollout(&env, &p, 0.95, 20, 1).unwrap();
        let (b, _) = rollout(&env, &p, 0.95, 20, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_mean_matches_exact_evaluation() {
        // exact-evaluation oracle: the Monte-Carlo mean over many rollouts
        // agrees within 3 standard errors, with the horizon chosen so the
        // truncation bias is far below the tolerance
        let mdp = random_mdp(4, 2, 0.1, 0.9, 300, 11);
        let policy = PolicySpec::uniform(4, 2);
        let exact = policy_evaluation(&mdp, &policy).unwrap();
        let n = 10_000;
        let mut returns = Vec::with_capacity(n);
        for seed in 0..n {
            let (disc, _) = rollout(&mdp, &policy, 0.9, 300, seed as u64).unwrap();
            returns.push(disc);
        }
        let mean: f64 = returns.iter().sum::<f64>() / n as f64;
        let var: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se + 1e-6,
            "MC mean {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn done_flags_mark_episode_boundaries() {
        let mdp = random_mdp(2, 2, 0.0, 0.9, 5, 3);
        let ds = sample_dataset(&mdp, &[PolicySpec::uniform(2, 2)], 12, 0).unwrap();
        // horizon 5: episodes of 5 transitions; the 12-transition prefix has
        // dones at positions 4 and 9 and a trailing partial episode
        let dones: Vec<usize> =
            ds.transitions.iter().enumerate().filter(|(_, t)| t.done).map(|(i, _)| i).collect();
        assert_eq!(dones, vec![4, 9]);
    }
}
