//! Numerical kernels: returns, advantage estimators, V-trace, losses and the SGD update.

pub mod hyper;
pub mod loss;
pub mod returns;
pub mod sgd;
pub mod vtrace;

pub use hyper::HyperParams;
pub use loss::{
    loss_and_grad, normalize_advantages, ppo_loss_and_grad, vtrace_loss_and_grad, LossSample,
    LossStats, PolicyObjective,
};
pub use returns::{gae_advantages, lambda_return};
pub use sgd::sgd_step;
pub use vtrace::{vtrace_targets, VTraceOutput};

/// Learning algorithm run by a learner group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    Ppo,
    VTrace,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::VTrace => "vtrace",
        }
    }

    pub fn parse(s: &str) -> crate::Result<Algo> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "vtrace" => Ok(Algo::VTrace),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown algo '{other}' (expected ppo or vtrace)"
            ))),
        }
    }
}
