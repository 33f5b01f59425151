//! Randomised-prior ensemble Gaussian world model for continuous
//! environments. Members predict the reward and the state change with
//! per-dimension Gaussian heads whose log-variances are soft-clamped
//! between trainable bounds shared across the ensemble.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Action, Dataset, State, Transition};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::posterior::net::{cosine_lr, Activation, Adam, MlpCache, MlpShape};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model hyperparameters (architecture and the randomised-prior scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Scale of the frozen prior network added to the mean heads.
    pub prior_scale: f64,
    pub xi_max_init: f64,
    pub xi_min_init: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: Activation::Relu,
            prior_scale: 1.0,
            // bracket unit variance at initialisation
            xi_max_init: 0.5,
            xi_min_init: -10.0,
        }
    }
}

/// Inference hyperparameters (ensemble size, elites, clamp penalty and the
/// optimisation schedule).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub members: usize,
    pub n_elites: usize,
    /// Coefficient `c` on the log-variance bound gap penalty.
    pub logvar_diff_coeff: f64,
    pub validation_split: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_frac: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            members: 7,
            n_elites: 5,
            logvar_diff_coeff: 0.01,
            validation_split: 0.1,
            epochs: 400,
            batch_size: 64,
            lr: 1e-3,
            final_lr_frac: 0.1,
            weight_decay: 2.5e-5,
        }
    }
}

/// Input/target normalisation constants computed from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub t_mean: Vec<f64>,
    pub t_std: Vec<f64>,
}

/// One member's Gaussian prediction at a state-action pair, in environment
/// units. Variances are the clamped log-variances rescaled by the target
/// normalisation, so in normalised units they lie within
/// `exp(xi_min) ..= exp(xi_max)` (up to the soft clamp's `ln(1+e^-gap)`
/// overshoot).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean_r: f64,
    pub var_r: f64,
    pub mean_delta: Vec<f64>,
    pub var_delta: Vec<f64>,
}

/// The trained ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub version: u32,
    shape: MlpShape,
    members: usize,
    /// Trainable parameters, member-major (`members * shape.n_params()`).
    params: Vec<f64>,
    /// Frozen randomised-prior parameters, same layout.
    prior_params: Vec<f64>,
    prior_scale: f64,
    /// Per-target-dimension log-variance bounds (trainable, shared).
    xi_max: Vec<f64>,
    xi_min: Vec<f64>,
    logvar_diff_coeff: f64,
    norm: Normalization,
    elite_indices: Vec<usize>,
    /// Reward support of the offline dataset; samples are clipped into it.
    reward_clip: (f64, f64),
    /// Per-dimension state support of the offline dataset.
    state_lo: Vec<f64>,
    state_hi: Vec<f64>,
    action_lo: Vec<f64>,
    action_hi: Vec<f64>,
    /// Episode-start states observed in the dataset; model rollouts reset
    /// from these.
    initial_states: Vec<Vec<f64>>,
    state_dim: usize,
    action_dim: usize,
    gamma: f64,
    max_steps: usize,
    env_id: String,
}

/// Gradients of [`nll_loss`] in the trainable-parameter layout: all member
/// network parameters (member-major) followed by `xi_max` then `xi_min`.
#[derive(Clone, Debug)]
pub struct EnsembleGrads {
    pub flat: Vec<f64>,
    n_net: usize,
    n_targets: usize,
}

impl EnsembleGrads {
    pub fn member(&self, m: usize) -> &[f64] {
        &self.flat[m * self.n_net..(m + 1) * self.n_net]
    }

    pub fn xi_max(&self) -> &[f64] {
        let base = self.flat.len() - 2 * self.n_targets;
        &self.flat[base..base + self.n_targets]
    }

    pub fn xi_min(&self) -> &[f64] {
        let base = self.flat.len() - self.n_targets;
        &self.flat[base..]
    }
}

/// Training summary over the held-out split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationStats {
    pub n_train: usize,
    pub n_val: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Per-member mean squared error on the validation split in normalised
    /// target units.
    pub member_val_mse: Vec<f64>,
    /// Elite-average normalised validation MSE.
    pub normalized_val_mse: f64,
}

/// Two-sided soft clamp of a raw log-variance between `xi_min` and
/// `xi_max`:
/// `xi = xi_max - softplus(xi_max - raw)` then
/// `xi = xi_min + softplus(xi - xi_min)`.
///
/// The lower bound holds strictly; the upper bound holds up to
/// `ln(1 + e^-(xi_max - xi_min))`, which is negligible for trained bound
/// gaps of a few nats.
pub fn soft_clamp(raw: f64, xi_min: f64, xi_max: f64) -> f64 {
    let xi1 = xi_max - softplus(xi_max - raw);
    xi_min + softplus(xi1 - xi_min)
}

/// `(d xi / d raw, d xi / d xi_max, d xi / d xi_min)` of [`soft_clamp`].
fn soft_clamp_grads(raw: f64, xi_min: f64, xi_max: f64) -> (f64, f64, f64) {
    let s1 = sigmoid(xi_max - raw);
    let xi1 = xi_max - softplus(xi_max - raw);
    let s2 = sigmoid(xi1 - xi_min);
    (s1 * s2, (1.0 - s1) * s2, 1.0 - s2)
}

impl EnsembleModel {
    /// Assemble a model from explicit parts. Used by checkpoint loading and
    /// by tests that hand-set member outputs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        shape: MlpShape,
        params: Vec<f64>,
        prior_params: Vec<f64>,
        prior_scale: f64,
        xi_max: Vec<f64>,
        xi_min: Vec<f64>,
        logvar_diff_coeff: f64,
        norm: Normalization,
        elite_indices: Vec<usize>,
        reward_clip: (f64, f64),
        state_support: (Vec<f64>, Vec<f64>),
        action_support: (Vec<f64>, Vec<f64>),
        initial_states: Vec<Vec<f64>>,
        state_dim: usize,
        action_dim: usize,
        gamma: f64,
        max_steps: usize,
        env_id: String,
    ) -> Result<Self> {
        let n_targets = 1 + state_dim;
        if shape.input_dim() != state_dim + action_dim || shape.output_dim() != 2 * n_targets {
            return Err(Error::InvalidModel("ensemble shape does not match dimensions".into()));
        }
        if params.len() % shape.n_params() != 0 || params.len() != prior_params.len() {
            return Err(Error::InvalidModel("ensemble parameter length mismatch".into()));
        }
        let members = params.len() / shape.n_params();
        if members == 0 {
            return Err(Error::InvalidModel("ensemble needs at least one member".into()));
        }
        if xi_max.len() != n_targets || xi_min.len() != n_targets {
            return Err(Error::InvalidModel("log-variance bound length mismatch".into()));
        }
        if elite_indices.iter().any(|&e| e >= members) {
            return Err(Error::InvalidModel("elite index out of range".into()));
        }
        Ok(Self {
            version: CHECKPOINT_VERSION,
            shape,
            members,
            params,
            prior_params,
            prior_scale,
            xi_max,
            xi_min,
            logvar_diff_coeff,
            norm,
            elite_indices,
            reward_clip,
            state_lo: state_support.0,
            state_hi: state_support.1,
            action_lo: action_support.0,
            action_hi: action_support.1,
            initial_states,
            state_dim,
            action_dim,
            gamma,
            max_steps,
            env_id,
        })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn elite_indices(&self) -> &[usize] {
        &self.elite_indices
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn reward_clip(&self) -> (f64, f64) {
        self.reward_clip
    }

    pub fn xi_bounds(&self) -> (&[f64], &[f64]) {
        (&self.xi_min, &self.xi_max)
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    /// Unnormalised dataset variance of target dimension `d` (0 is the
    /// reward, `1 + i` the i-th state-change component).
    pub fn target_variance(&self, d: usize) -> f64 {
        self.norm.t_std[d] * self.norm.t_std[d]
    }

    fn n_targets(&self) -> usize {
        1 + self.state_dim
    }

    pub fn n_trainable(&self) -> usize {
        self.params.len() + 2 * self.n_targets()
    }

    /// Snapshot of all trainable parameters: member nets, then `xi_max`,
    /// then `xi_min`.
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_trainable());
        out.extend_from_slice(&self.params);
        out.extend_from_slice(&self.xi_max);
        out.extend_from_slice(&self.xi_min);
        out
    }

    pub fn set_trainable(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_trainable());
        let np = self.params.len();
        let d = self.n_targets();
        self.params.copy_from_slice(&theta[..np]);
        self.xi_max.copy_from_slice(&theta[np..np + d]);
        self.xi_min.copy_from_slice(&theta[np + d..]);
    }

    fn member_params(&self, m: usize) -> &[f64] {
        let np = self.shape.n_params();
        &self.params[m * np..(m + 1) * np]
    }

    fn prior_member_params(&self, m: usize) -> &[f64] {
        let np = self.shape.n_params();
        &self.prior_params[m * np..(m + 1) * np]
    }

    fn normalize_input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim);
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.norm.in_mean[i]) / self.norm.in_std[i];
        }
        x
    }

    /// Member prediction in normalised target units: `(means, clamped
    /// log-variances)`.
    pub fn predict_normalized(&self, member: usize, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = self.normalize_input(s, a);
        let out = self.shape.forward(self.member_params(member), &x, None);
        let prior_out = self.shape.forward(self.prior_member_params(member), &x, None);
        let d = self.n_targets();
        let mut means = Vec::with_capacity(d);
        let mut xis = Vec::with_capacity(d);
        for i in 0..d {
            means.push(out[i] + self.prior_scale * prior_out[i]);
            xis.push(soft_clamp(out[d + i], self.xi_min[i], self.xi_max[i]));
        }
        (means, xis)
    }

    /// Member prediction in environment units.
    pub fn predict(&self, member: usize, s: &[f64], a: &[f64]) -> GaussianPrediction {
        let (means, xis) = self.predict_normalized(member, s, a);
        let d = self.n_targets();
        let denorm_mean = |i: usize, v: f64| v * self.norm.t_std[i] + self.norm.t_mean[i];
        let denorm_var = |i: usize, xi: f64| xi.exp() * self.norm.t_std[i] * self.norm.t_std[i];
        GaussianPrediction {
            mean_r: denorm_mean(0, means[0]),
            var_r: denorm_var(0, xis[0]),
            mean_delta: (1..d).map(|i| denorm_mean(i, means[i])).collect(),
            var_delta: (1..d).map(|i| denorm_var(i, xis[i])).collect(),
        }
    }

    /// Draw a transition: a uniformly sampled elite member's Gaussian is
    /// sampled, the reward is clipped to the dataset support and the next
    /// state is `s + delta` clamped to the observed state support.
    pub fn sample_transition(&self, s: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)> {
        if self.elite_indices.is_empty() {
            return Err(Error::InvalidModel("model has no elites; train it first".into()));
        }
        let member = self.elite_indices[rng.gen_range(0..self.elite_indices.len())];
        let pred = self.predict(member, s, a);
        let mut r = pred.mean_r;
        if pred.var_r > 0.0 {
            r += Normal::new(0.0, pred.var_r.sqrt()).expect("valid normal").sample(rng);
        }
        let r = r.clamp(self.reward_clip.0, self.reward_clip.1);
        let mut s_next = Vec::with_capacity(self.state_dim);
        for i in 0..self.state_dim {
            let mut delta = pred.mean_delta[i];
            if pred.var_delta[i] > 0.0 {
                delta += Normal::new(0.0, pred.var_delta[i].sqrt()).expect("valid normal").sample(rng);
            }
            s_next.push((s[i] + delta).clamp(self.state_lo[i], self.state_hi[i]));
        }
        Ok((r, s_next))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Data(format!("checkpoint write failed: {e}")))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: Self = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Data(format!("checkpoint read failed: {e}")))?;
        if model.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Rollout adapter for a single ensemble member's dynamics.
pub struct EnsembleMemberSim<'a> {
    pub model: &'a EnsembleModel,
    pub member: usize,
}

impl crate::sim::Simulator for EnsembleMemberSim<'_> {
    fn env_id(&self) -> String {
        format!("{}-member{}", self.model.env_id, self.member)
    }

    fn is_discrete(&self) -> bool {
        false
    }

    fn gamma(&self) -> f64 {
        self.model.gamma
    }

    fn max_steps(&self) -> usize {
        self.model.max_steps
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> State {
        let starts = &self.model.initial_states;
        State::Continuous(starts[rng.gen_range(0..starts.len())].clone())
    }

    fn step(&self, s: &State, a: &Action, rng: &mut ChaCha8Rng) -> (f64, State, bool) {
        let s = s.vector();
        let a: Vec<f64> = a
            .vector()
            .iter()
            .enumerate()
            .map(|(i, x)| x.clamp(self.model.action_lo[i], self.model.action_hi[i]))
            .collect();
        let pred = self.model.predict(self.member, s, &a);
        let mut r = pred.mean_r;
        if pred.var_r > 0.0 {
            r += Normal::new(0.0, pred.var_r.sqrt()).expect("valid normal").sample(rng);
        }
        let r = r.clamp(self.model.reward_clip.0, self.model.reward_clip.1);
        let s_next: Vec<f64> = (0..self.model.state_dim)
            .map(|i| {
                let mut d = pred.mean_delta[i];
                if pred.var_delta[i] > 0.0 {
                    d += Normal::new(0.0, pred.var_delta[i].sqrt()).expect("valid normal").sample(rng);
                }
                (s[i] + d).clamp(self.model.state_lo[i], self.model.state_hi[i])
            })
            .collect();
        (r, State::Continuous(s_next), false)
    }

    fn header(&self) -> crate::dataset::DatasetHeader {
        crate::dataset::DatasetHeader {
            env_id: self.env_id(),
            discrete: false,
            state_dim: self.model.state_dim,
            action_dim: self.model.action_dim,
            gamma: self.model.gamma,
            max_steps: self.model.max_steps,
            behavior: String::new(),
            seed: 0,
        }
    }
}

fn transition_pair(t: &Transition) -> (Vec<f64>, Vec<f64>) {
    let s = t.s.vector();
    let a = t.a.vector();
    let s2 = t.s_next.vector();
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    let mut y = Vec::with_capacity(1 + s.len());
    y.push(t.r);
    y.extend(s2.iter().zip(s).map(|(n, o)| n - o));
    (x, y)
}

/// Summed per-member Gaussian negative log likelihood over `(r, delta)`
/// targets with soft-clamped log-variances, averaged over the batch, plus
/// the bound-gap penalty `c * sum_d (xi_max_d - xi_min_d)`. Returns the
/// loss and its reverse-mode gradients.
pub fn nll_loss(model: &EnsembleModel, batch: &[Transition]) -> Result<(f64, EnsembleGrads)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = batch
        .iter()
        .map(|t| {
            let (x, y) = transition_pair(t);
            (normalize(&x, &model.norm.in_mean, &model.norm.in_std), normalize(&y, &model.norm.t_mean, &model.norm.t_std))
        })
        .collect();
    let theta = model.trainable();
    let mut grads = vec![0.0; theta.len()];
    let loss = loss_and_grads_normalized(
        &model.shape,
        model.members,
        &theta,
        &model.prior_params,
        model.prior_scale,
        model.logvar_diff_coeff,
        &pairs,
        &mut grads,
    )?;
    Ok((
        loss,
        EnsembleGrads { flat: grads, n_net: model.shape.n_params(), n_targets: model.n_targets() },
    ))
}

fn normalize(v: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    v.iter().enumerate().map(|(i, x)| (x - mean[i]) / std[i]).collect()
}

/// Loss core over normalised pairs. `theta` holds member parameters
/// (member-major) followed by `xi_max` and `xi_min`; `grads` uses the same
/// layout.
#[allow(clippy::too_many_arguments)]
fn loss_and_grads_normalized(
    shape: &MlpShape,
    members: usize,
    theta: &[f64],
    prior_params: &[f64],
    prior_scale: f64,
    coeff: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    grads: &mut [f64],
) -> Result<f64> {
    let np = shape.n_params();
    let d = shape.output_dim() / 2;
    let n_net = members * np;
    let (xi_max, xi_min) = {
        let tail = &theta[n_net..];
        (&tail[..d], &tail[d..])
    };
    let inv_b = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut cache = MlpCache::default();
    let mut grad_out = vec![0.0; shape.output_dim()];
    for m in 0..members {
        let params = &theta[m * np..(m + 1) * np];
        let prior = &prior_params[m * np..(m + 1) * np];
        for (x, y) in pairs {
            let out = shape.forward(params, x, Some(&mut cache));
            let prior_out = shape.forward(prior, x, None);
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..d {
                let mu = out[i] + prior_scale * prior_out[i];
                let raw = out[d + i];
                let xi = soft_clamp(raw, xi_min[i], xi_max[i]);
                let e = (-xi).exp();
                let resid = y[i] - mu;
                let term = xi + resid * resid * e;
                if !term.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss contribution at target dim {i} (member {m})"
                    )));
                }
                loss += term * inv_b;
                let dmu = -2.0 * resid * e * inv_b;
                let dxi = (1.0 - resid * resid * e) * inv_b;
                let (g_raw, g_max, g_min) = soft_clamp_grads(raw, xi_min[i], xi_max[i]);
                grad_out[i] = dmu;
                grad_out[d + i] = dxi * g_raw;
                grads[n_net + i] += dxi * g_max;
                grads[n_net + d + i] += dxi * g_min;
            }
            shape.backward(params, &cache, &grad_out, &mut grads[m * np..(m + 1) * np]);
        }
    }
    for i in 0..d {
        loss += coeff * (xi_max[i] - xi_min[i]);
        grads[n_net + i] += coeff;
        grads[n_net + d + i] -= coeff;
    }
    Ok(loss)
}

/// Maximum relative gradient error of [`nll_loss`] against central finite
/// differences with step `eps`. Relative error uses the denominator
/// `max(|analytic| + |numeric|, 1e-2)` so parameters with vanishing
/// gradients do not amplify finite-difference rounding noise.
pub fn gradient_check_max_rel_err(model: &EnsembleModel, batch: &[Transition], eps: f64) -> Result<f64> {
    let (_, grads) = nll_loss(model, batch)?;
    let mut probe = model.clone();
    let theta0 = model.trainable();
    let mut worst = 0.0f64;
    for i in 0..theta0.len() {
        let mut theta = theta0.clone();
        theta[i] = theta0[i] + eps;
        probe.set_trainable(&theta);
        let (up, _) = nll_loss(&probe, batch)?;
        theta[i] = theta0[i] - eps;
        probe.set_trainable(&theta);
        let (down, _) = nll_loss(&probe, batch)?;
        let fd = (up - down) / (2.0 * eps);
        let an = grads.flat[i];
        let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-2);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// Train a randomised-prior ensemble on an offline dataset.
///
/// Deterministic given the seed. Fails with a "PIL undefined" error when
/// the validation split is smaller than one batch, and with a numeric error
/// if the loss diverges.
pub fn train_ensemble(
    data: &Dataset,
    phi_model: &EnsembleConfig,
    phi_infer: &TrainConfig,
    seed: u64,
) -> Result<(EnsembleModel, ValidationStats)> {
    use rand::SeedableRng;
    if data.header.discrete {
        return Err(Error::InvalidModel("ensemble training needs a continuous dataset".into()));
    }
    if phi_infer.members == 0 || phi_infer.n_elites == 0 || phi_infer.n_elites > phi_infer.members {
        return Err(Error::InvalidModel("invalid ensemble/elite sizes".into()));
    }
    if !(phi_infer.validation_split > 0.0 && phi_infer.validation_split < 1.0) {
        return Err(Error::InvalidModel("validation split must lie in (0, 1)".into()));
    }
    let (train_idx, val_idx) = data.split_indices(phi_infer.validation_split, seed ^ 0x5EED_5011);
    if val_idx.len() < phi_infer.batch_size {
        return Err(Error::PilUndefined(format!(
            "validation split has {} points, smaller than one batch of {}",
            val_idx.len(),
            phi_infer.batch_size
        )));
    }
    if train_idx.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }

    let state_dim = data.header.state_dim;
    let action_dim = data.header.action_dim;
    let n_targets = 1 + state_dim;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = data.transitions.iter().map(transition_pair).collect();

    // normalisation constants from the training split only
    let norm = fit_normalization(&pairs, &train_idx, state_dim + action_dim, n_targets);
    let normalized: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|(x, y)| (normalize(x, &norm.in_mean, &norm.in_std), normalize(y, &norm.t_mean, &norm.t_std)))
        .collect();

    let shape = MlpShape::new(state_dim + action_dim, &phi_model.hidden, 2 * n_targets, phi_model.activation);
    let np = shape.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(phi_infer.members * np);
    let mut prior_params = Vec::with_capacity(phi_infer.members * np);
    for _ in 0..phi_infer.members {
        params.extend(shape.init_lecun(&mut rng));
    }
    for _ in 0..phi_infer.members {
        prior_params.extend(shape.init_lecun(&mut rng));
    }

    let mut theta = params;
    theta.extend(std::iter::repeat(phi_model.xi_max_init).take(n_targets));
    theta.extend(std::iter::repeat(phi_model.xi_min_init).take(n_targets));
    let n_net = phi_infer.members * np;
    // weight decay applies to network weights only, not the clamp bounds
    let mut decay_mask = vec![true; theta.len()];
    decay_mask[n_net..].iter_mut().for_each(|m| *m = false);

    let train_pairs = |idx: &[usize]| -> Vec<(Vec<f64>, Vec<f64>)> {
        idx.iter().map(|&i| normalized[i].clone()).collect()
    };
    let full_train = train_pairs(&train_idx);

    let mut grads = vec![0.0; theta.len()];
    let eval_loss = |theta: &[f64], grads: &mut Vec<f64>| -> Result<f64> {
        grads.iter_mut().for_each(|g| *g = 0.0);
        loss_and_grads_normalized(
            &shape,
            phi_infer.members,
            theta,
            &prior_params,
            phi_model.prior_scale,
            phi_infer.logvar_diff_coeff,
            &full_train,
            grads,
        )
    };
    let initial_loss = eval_loss(&theta, &mut grads)?;

    let batches_per_epoch = train_idx.len().div_ceil(phi_infer.batch_size);
    let total_steps = (phi_infer.epochs * batches_per_epoch) as u64;
    let mut opt = Adam::new(theta.len());
    let mut order: Vec<usize> = train_idx.clone();
    let mut step = 0u64;
    for _epoch in 0..phi_infer.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(phi_infer.batch_size) {
            let batch = train_pairs(chunk);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss = loss_and_grads_normalized(
                &shape,
                phi_infer.members,
                &theta,
                &prior_params,
                phi_model.prior_scale,
                phi_infer.logvar_diff_coeff,
                &batch,
                &mut grads,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric("training diverged: non-finite loss".into()));
            }
            let lr = cosine_lr(phi_infer.lr, phi_infer.final_lr_frac, step, total_steps);
            opt.step(&mut theta, &grads, lr, phi_infer.weight_decay, &decay_mask);
            step += 1;
        }
    }
    let final_loss = eval_loss(&theta, &mut grads)?;

    // member validation MSE on normalised targets
    let (xi_tail, member_theta) = {
        let (members_part, tail) = theta.split_at(n_net);
        (tail.to_vec(), members_part.to_vec())
    };
    let mut member_val_mse = vec![0.0; phi_infer.members];
    for m in 0..phi_infer.members {
        let p = &member_theta[m * np..(m + 1) * np];
        let prior = &prior_params[m * np..(m + 1) * np];
        let mut acc = 0.0;
        for &i in &val_idx {
            let (x, y) = &normalized[i];
            let out = shape.forward(p, x, None);
            let prior_out = shape.forward(prior, x, None);
            for dd in 0..n_targets {
                let mu = out[dd] + phi_model.prior_scale * prior_out[dd];
                acc += (y[dd] - mu) * (y[dd] - mu);
            }
        }
        member_val_mse[m] = acc / (val_idx.len() * n_targets) as f64;
    }
    let mut ranked: Vec<usize> = (0..phi_infer.members).collect();
    ranked.sort_by(|&a, &b| {
        member_val_mse[a]
            .partial_cmp(&member_val_mse[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let elite_indices: Vec<usize> = ranked[..phi_infer.n_elites].to_vec();
    let normalized_val_mse =
        elite_indices.iter().map(|&e| member_val_mse[e]).sum::<f64>() / elite_indices.len() as f64;

    // dataset supports for clipping and rollout resets
    let mut reward_lo = f64::INFINITY;
    let mut reward_hi = f64::NEG_INFINITY;
    let mut state_lo = vec![f64::INFINITY; state_dim];
    let mut state_hi = vec![f64::NEG_INFINITY; state_dim];
    let mut action_lo = vec![f64::INFINITY; action_dim];
    let mut action_hi = vec![f64::NEG_INFINITY; action_dim];
    let mut initial_states = Vec::new();
    let mut episode_start = true;
    for t in &data.transitions {
        reward_lo = reward_lo.min(t.r);
        reward_hi = reward_hi.max(t.r);
        let s = t.s.vector();
        let s2 = t.s_next.vector();
        for i in 0..state_dim {
            state_lo[i] = state_lo[i].min(s[i]).min(s2[i]);
            state_hi[i] = state_hi[i].max(s[i]).max(s2[i]);
        }
        for (i, x) in t.a.vector().iter().enumerate() {
            action_lo[i] = action_lo[i].min(*x);
            action_hi[i] = action_hi[i].max(*x);
        }
        if episode_start && initial_states.len() < 4096 {
            initial_states.push(s.to_vec());
        }
        episode_start = t.done;
    }

    let d = n_targets;
    let model = EnsembleModel::from_parts(
        shape,
        member_theta,
        prior_params,
        phi_model.prior_scale,
        xi_tail[..d].to_vec(),
        xi_tail[d..].to_vec(),
        phi_infer.logvar_diff_coeff,
        norm,
        elite_indices,
        (reward_lo, reward_hi),
        (state_lo, state_hi),
        (action_lo, action_hi),
        initial_states,
        state_dim,
        action_dim,
        data.header.gamma,
        data.header.max_steps,
        data.header.env_id.clone(),
    )?;
    let stats = ValidationStats {
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        initial_loss,
        final_loss,
        member_val_mse,
        normalized_val_mse,
    };
    Ok((model, stats))
}

fn fit_normalization(
    pairs: &[(Vec<f64>, Vec<f64>)],
    train_idx: &[usize],
    in_dim: usize,
    t_dim: usize,
) -> Normalization {
    let n = train_idx.len() as f64;
    let mut in_mean = vec![0.0; in_dim];
    let mut t_mean = vec![0.0; t_dim];
    for &i in train_idx {
        for (j, v) in pairs[i].0.iter().enumerate() {
            in_mean[j] += v / n;
        }
        for (j, v) in pairs[i].1.iter().enumerate() {
            t_mean[j] += v / n;
        }
    }
    let mut in_var = vec![0.0; in_dim];
    let mut t_var = vec![0.0; t_dim];
    for &i in train_idx {
        for (j, v) in pairs[i].0.iter().enumerate() {
            in_var[j] += (v - in_mean[j]) * (v - in_mean[j]) / n;
        }
        for (j, v) in pairs[i].1.iter().enumerate() {
            t_var[j] += (v - t_mean[j]) * (v - t_mean[j]) / n;
        }
    }
    let floor = 1e-8;
    Normalization {
        in_mean,
        in_std: in_var.iter().map(|v| v.sqrt().max(floor)).collect(),
        t_mean,
        t_std: t_var.iter().map(|v| v.sqrt().max(floor)).collect(),
    }
}
