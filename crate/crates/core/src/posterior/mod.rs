//! Posterior backends over environment dynamics: exact conjugate inference
//! for tabular MDPs and a randomised-prior ensemble Gaussian world model
//! for continuous environments.

pub mod conjugate;
pub mod ensemble;
pub mod net;

pub use conjugate::{ConjugatePosterior, ConjugatePrior, EnvSpec};
pub use ensemble::{
    nll_loss, train_ensemble, EnsembleConfig, EnsembleGrads, EnsembleMemberSim, EnsembleModel,
    GaussianPrediction, TrainConfig, ValidationStats,
};

/// Either posterior backend behind one handle.
#[derive(Clone, Debug)]
pub enum Posterior {
    Conjugate(ConjugatePosterior),
    Ensemble(EnsembleModel),
}

impl Posterior {
    pub fn gamma(&self) -> f64 {
        match self {
            Posterior::Conjugate(p) => p.spec().gamma,
            Posterior::Ensemble(m) => m.gamma(),
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            Posterior::Conjugate(p) => p.spec().max_steps,
            Posterior::Ensemble(m) => m.max_steps(),
        }
    }

    pub fn as_conjugate(&self) -> Option<&ConjugatePosterior> {
        match self {
            Posterior::Conjugate(p) => Some(p),
            Posterior::Ensemble(_) => None,
        }
    }

    pub fn as_ensemble(&self) -> Option<&EnsembleModel> {
        match self {
            Posterior::Ensemble(m) => Some(m),
            Posterior::Conjugate(_) => None,
        }
    }
}
