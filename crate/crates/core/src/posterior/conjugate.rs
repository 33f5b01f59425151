//! Exact conjugate posterior for tabular MDPs: a Dirichlet over each
//! transition row and a Normal over each mean reward under known
//! observation noise.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Known structural metadata of a tabular environment: spaces, discount,
/// initial distribution, reward noise and episode horizon. Only the
/// transition probabilities and reward means are treated as unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    pub reward_std: f64,
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        Self {
            env_id: "tabular".into(),
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            initial_dist: mdp.initial_dist().to_vec(),
            reward_std: mdp.reward_std(),
            max_steps: mdp.max_steps(),
        }
    }
}

/// Prior hyperparameters: a symmetric Dirichlet concentration and a Normal
/// over each mean reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePrior {
    /// Symmetric Dirichlet concentration per `(s, a, s')` cell.
    pub alpha0: f64,
    /// Prior mean of each reward mean.
    pub mu0: f64,
    /// Prior variance of each reward mean.
    pub tau0_sq: f64,
}

impl Default for ConjugatePrior {
    fn default() -> Self {
        Self { alpha0: 1.0, mu0: 0.0, tau0_sq: 1.0 }
    }
}

/// Exact posterior: Dirichlet pseudo-counts per transition row plus
/// sufficient statistics `(n, sum_r)` for the known-variance Normal reward
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    spec: EnvSpec,
    prior: ConjugatePrior,
    /// Row-major `(s, a, s')` pseudo-counts, including the prior.
    alpha: Vec<f64>,
    /// Visit counts per `(s, a)`.
    counts: Vec<f64>,
    /// Summed rewards per `(s, a)`.
    reward_sums: Vec<f64>,
}

impl ConjugatePosterior {
    pub fn from_prior(spec: EnvSpec, prior: ConjugatePrior) -> Result<Self> {
        if !(prior.alpha0 > 0.0) {
            return Err(Error::InvalidModel(format!("alpha0 {} must be positive", prior.alpha0)));
        }
        if !(prior.tau0_sq > 0.0) {
            return Err(Error::InvalidModel(format!("tau0_sq {} must be positive", prior.tau0_sq)));
        }
        let sa = spec.n_states * spec.n_actions;
        Ok(Self {
            alpha: vec![prior.alpha0; sa * spec.n_states],
            counts: vec![0.0; sa],
            reward_sums: vec![0.0; sa],
            spec,
            prior,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn prior(&self) -> &ConjugatePrior {
        &self.prior
    }

    pub fn alpha_row(&self, s: usize, a: usize) -> &[f64] {
        &self.alpha[(s * self.spec.n_actions + a) * self.spec.n_states..][..self.spec.n_states]
    }

    pub fn visit_count(&self, s: usize, a: usize) -> f64 {
        self.counts[s * self.spec.n_actions + a]
    }

    /// Posterior `(mean, variance)` of the mean reward at `(s, a)` under
    /// the known-noise conjugate Normal update. A zero noise level treats
    /// observations as exact.
    pub fn reward_posterior(&self, s: usize, a: usize) -> (f64, f64) {
        let i = s * self.spec.n_actions + a;
        let n = self.counts[i];
        let sigma_sq = self.spec.reward_std * self.spec.reward_std;
        if sigma_sq == 0.0 {
            if n > 0.0 {
                return (self.reward_sums[i] / n, 0.0);
            }
            return (self.prior.mu0, self.prior.tau0_sq);
        }
        let precision = 1.0 / self.prior.tau0_sq + n / sigma_sq;
        let var = 1.0 / precision;
        let mean = var * (self.prior.mu0 / self.prior.tau0_sq + self.reward_sums[i] / sigma_sq);
        (mean, var)
    }

    /// Posterior mean transition row `alpha / sum(alpha)`.
    pub fn mean_row(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.alpha_row(s, a);
        let total: f64 = row.iter().sum();
        row.iter().map(|x| x / total).collect()
    }

    /// Per-component Dirichlet variances of a transition row.
    pub fn row_variances(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.alpha_row(s, a);
        let total: f64 = row.iter().sum();
        row.iter()
            .map(|&a_j| a_j * (total - a_j) / (total * total * (total + 1.0)))
            .collect()
    }

    /// Absorb a dataset of transitions. Order-invariant and batch-additive:
    /// updating with two datasets in either order equals updating with
    /// their concatenation.
    pub fn update(&self, data: &Dataset) -> Result<Self> {
        let mut next = self.clone();
        for (i, t) in data.transitions.iter().enumerate() {
            let (s, a, s2) = (t.s.index(), t.a.index(), t.s_next.index());
            if s >= self.spec.n_states || a >= self.spec.n_actions || s2 >= self.spec.n_states {
                return Err(Error::Data(format!(
                    "transition {i} indices ({s}, {a}, {s2}) out of range for {}x{}",
                    self.spec.n_states, self.spec.n_actions
                )));
            }
            next.alpha[(s * self.spec.n_actions + a) * self.spec.n_states + s2] += 1.0;
            next.counts[s * self.spec.n_actions + a] += 1.0;
            next.reward_sums[s * self.spec.n_actions + a] += t.r;
        }
        Ok(next)
    }

    /// Draw a full MDP hypothesis: each transition row from its Dirichlet,
    /// each reward mean from its Normal. Structural fields come from the
    /// environment spec.
    pub fn sample_mdp(&self, rng: &mut ChaCha8Rng) -> TabularMdp {
        let (s_n, a_n) = (self.spec.n_states, self.spec.n_actions);
        let mut transition = Vec::with_capacity(s_n * a_n * s_n);
        for s in 0..s_n {
            for a in 0..a_n {
                transition.extend(sample_dirichlet(self.alpha_row(s, a), rng));
            }
        }
        let mut reward_mean = Vec::with_capacity(s_n * a_n);
        for s in 0..s_n {
            for a in 0..a_n {
                let (mean, var) = self.reward_posterior(s, a);
                let draw = if var > 0.0 {
                    Normal::new(mean, var.sqrt()).expect("valid normal").sample(rng)
                } else {
                    mean
                };
                reward_mean.push(draw);
            }
        }
        TabularMdp::new(
            s_n,
            a_n,
            transition,
            reward_mean,
            self.spec.reward_std,
            self.spec.gamma,
            self.spec.initial_dist.clone(),
            self.spec.max_steps,
        )
        .expect("sampled MDP satisfies construction invariants")
    }

    /// The posterior-mean MDP: Dirichlet mean rows and posterior reward
    /// means.
    pub fn mean_mdp(&self) -> TabularMdp {
        let (s_n, a_n) = (self.spec.n_states, self.spec.n_actions);
        let mut transition = Vec::with_capacity(s_n * a_n * s_n);
        let mut reward_mean = Vec::with_capacity(s_n * a_n);
        for s in 0..s_n {
            for a in 0..a_n {
                let mut row = self.mean_row(s, a);
                let resid: f64 = 1.0 - row.iter().sum::<f64>();
                let last = row.len() - 1;
                row[last] += resid;
                transition.extend(row);
                reward_mean.push(self.reward_posterior(s, a).0);
            }
        }
        TabularMdp::new(
            s_n,
            a_n,
            transition,
            reward_mean,
            self.spec.reward_std,
            self.spec.gamma,
            self.spec.initial_dist.clone(),
            self.spec.max_steps,
        )
        .expect("mean MDP satisfies construction invariants")
    }
}

/// Dirichlet draw by normalised Gamma variates. Handles rows of length 1
/// and re-normalises exactly so downstream row-sum invariants hold.
fn sample_dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    if alpha.len() == 1 {
        return vec![1.0];
    }
    for _ in 0..100 {
        let mut draws: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let sum: f64 = draws.iter().sum();
        if sum > 1e-300 {
            draws.iter_mut().for_each(|x| *x /= sum);
            let resid: f64 = 1.0 - draws.iter().sum::<f64>();
            let last = draws.len() - 1;
            draws[last] += resid;
            return draws;
        }
    }
    // all-zero draws happen only for vanishing concentrations
    let mut row = vec![0.0; alpha.len()];
    row[0] = 1.0;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Action, DatasetHeader, State, Transition};
    use crate::env::random_mdp;
    use crate::mdp::PolicySpec;
    use crate::sim::sample_dataset;
    use rand::SeedableRng;

    fn spec(n_states: usize, n_actions: usize) -> EnvSpec {
        EnvSpec {
            env_id: "t".into(),
            n_states,
            n_actions,
            gamma: 0.9,
            initial_dist: {
                let mut v = vec![0.0; n_states];
                v[0] = 1.0;
                v
            },
            reward_std: 0.5,
            max_steps: 10,
        }
    }

    fn one_transition_dataset(s: usize, a: usize, r: f64, s2: usize) -> Dataset {
        let header = DatasetHeader {
            env_id: "t".into(),
            discrete: true,
            state_dim: 3,
            action_dim: 2,
            gamma: 0.9,
            max_steps: 10,
            behavior: String::new(),
            seed: 0,
        };
        Dataset::new(
            header,
            vec![Transition {
                s: State::Discrete(s),
                a: Action::Discrete(a),
                r,
                s_next: State::Discrete(s2),
                done: true,
            }],
        )
        .unwrap()
    }

    #[test]
    fn empty_update_returns_prior() {
        let post = ConjugatePosterior::from_prior(spec(3, 2), ConjugatePrior::default()).unwrap();
        let ds = one_transition_dataset(0, 0, 0.0, 0).prefix(0);
        let updated = post.update(&ds).unwrap();
        assert_eq!(post, updated);
    }

    #[test]
    fn single_count_increment() {
        let post = ConjugatePosterior::from_prior(spec(3, 2), ConjugatePrior::default()).unwrap();
        let ds = one_transition_dataset(1, 0, 0.3, 2);
        let updated = post.update(&ds).unwrap();
        assert_eq!(updated.alpha_row(1, 0), &[1.0, 1.0, 2.0]);
        assert_eq!(updated.alpha_row(0, 0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn predictive_matches_counting_oracle() {
        let mdp = random_mdp(3, 2, 0.2, 0.9, 20, 5);
        let ds = sample_dataset(&mdp, &[PolicySpec::uniform(3, 2)], 5000, 3).unwrap();
        let prior = ConjugatePrior { alpha0: 0.7, mu0: 0.0, tau0_sq: 1.0 };
        let post = ConjugatePosterior::from_prior(EnvSpec::from_mdp(&mdp), prior).unwrap();
        let post = post.update(&ds).unwrap();
        // brute-force counting oracle with prior smoothing
        let mut counts = vec![0.0f64; 3 * 2 * 3];
        for t in &ds.transitions {
            counts[(t.s.index() * 2 + t.a.index()) * 3 + t.s_next.index()] += 1.0;
        }
        for s in 0..3 {
            for a in 0..2 {
                let total: f64 =
                    (0..3).map(|j| counts[(s * 2 + a) * 3 + j] + 0.7).sum();
                for j in 0..3 {
                    let expected = (counts[(s * 2 + a) * 3 + j] + 0.7) / total;
                    let got = post.mean_row(s, a)[j];
                    assert!((got - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn update_is_order_invariant_and_batch_additive() {
        let mdp = random_mdp(3, 2, 0.2, 0.9, 20, 6);
        let ds = sample_dataset(&mdp, &[PolicySpec::uniform(3, 2)], 100, 1).unwrap();
        let d1 = ds.prefix(60);
        let d2 = ds.subset(&(60..100).collect::<Vec<_>>());
        let prior = ConjugatePosterior::from_prior(EnvSpec::from_mdp(&mdp), ConjugatePrior::default()).unwrap();
        let ab = prior.update(&d1).unwrap().update(&d2).unwrap();
        let ba = prior.update(&d2).unwrap().update(&d1).unwrap();
        let joint = prior.update(&ds).unwrap();
        // batch additivity in concatenation order is bit-exact
        assert_eq!(ab, joint);
        // reversing the batches leaves counts exact and the reward sums
        // equal up to float addition rounding
        assert_eq!(ba.alpha, joint.alpha);
        assert_eq!(ba.counts, joint.counts);
        for (x, y) in ba.reward_sums.iter().zip(&joint.reward_sums) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn concentrated_row_samples_one_hot() {
        let mut post = ConjugatePosterior::from_prior(spec(3, 1), ConjugatePrior::default()).unwrap();
        // push one direction to an enormous pseudo-count
        post.alpha[2] = 1e8;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampled = post.sample_mdp(&mut rng);
        let row = sampled.transition_row(0, 0);
        assert!((row[2] - 1.0).abs() < 1e-6, "row = {row:?}");
    }

    #[test]
    fn dirichlet_mean_oracle() {
        let post = ConjugatePosterior::from_prior(spec(3, 1), ConjugatePrior { alpha0: 2.0, mu0: 0.0, tau0_sq: 1.0 })
            .unwrap();
        let ds = one_transition_dataset(0, 0, 1.0, 1);
        let post = post.update(&ds).unwrap();
        let expect = post.mean_row(0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let k = 10_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..k {
            let m = post.sample_mdp(&mut rng);
            for (j, p) in m.transition_row(0, 0).iter().enumerate() {
                acc[j] += p;
            }
        }
        for j in 0..3 {
            let mean = acc[j] / k as f64;
            assert!((mean - expect[j]).abs() < 0.01, "component {j}: {mean} vs {}", expect[j]);
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let post = ConjugatePosterior::from_prior(spec(3, 2), ConjugatePrior::default()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = post.sample_mdp(&mut r1);
        let b = post.sample_mdp(&mut r2);
        assert_eq!(a.transition_row(2, 1), b.transition_row(2, 1));
        assert_eq!(a.reward_mean(1, 0), b.reward_mean(1, 0));
    }

    #[test]
    fn posterior_mean_converges_to_truth() {
        // L1 distance of the posterior mean row from the true row at
        // N = 10^4 i.i.d. samples stays small across seeds
        let mdp = random_mdp(4, 1, 0.0, 0.9, 100, 9);
        let mut failures = 0;
        let n_seeds = 20;
        for seed in 0..n_seeds {
            let ds = sample_dataset(&mdp, &[PolicySpec::uniform(4, 1)], 10_000, seed).unwrap();
            let post = ConjugatePosterior::from_prior(EnvSpec::from_mdp(&mdp), ConjugatePrior::default())
                .unwrap()
                .update(&ds)
                .unwrap();
            for s in 0..4 {
                let l1: f64 = post
                    .mean_row(s, 0)
                    .iter()
                    .zip(mdp.transition_row(s, 0))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                if l1 > 0.05 {
                    failures += 1;
                }
            }
        }
        assert!(failures == 0, "{failures} rows of {} exceeded the L1 budget", 4 * n_seeds);
    }

    #[test]
    fn reward_posterior_known_variance_update() {
        let post = ConjugatePosterior::from_prior(spec(3, 2), ConjugatePrior { alpha0: 1.0, mu0: 0.0, tau0_sq: 4.0 })
            .unwrap();
        let ds = one_transition_dataset(0, 1, 2.0, 1);
        let post = post.update(&ds).unwrap();
        // sigma^2 = 0.25, prior var 4: posterior var = 1/(1/4 + 1/0.25)
        let (mean, var) = post.reward_posterior(0, 1);
        let expect_var = 1.0 / (0.25 + 4.0);
        let expect_mean = expect_var * (0.0 + 2.0 / 0.25);
        assert!((var - expect_var).abs() < 1e-12);
        assert!((mean - expect_mean).abs() < 1e-12);
    }
}
