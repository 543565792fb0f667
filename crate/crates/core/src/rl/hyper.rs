use crate::error::{Error, Result};

/// Learning hyperparameters carried by every task and model record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub kl_teacher_coef: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub elo_sigma: f64,
    pub batch_size: u32,
    pub unroll_len: u32,
    pub max_reuse: u32,
    pub normalize_advantages: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.01,
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            kl_teacher_coef: 0.0,
            rho_bar: 1.0,
            c_bar: 1.0,
            elo_sigma: 200.0,
            batch_size: 32,
            unroll_len: 1,
            max_reuse: 1,
            normalize_advantages: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let reals = [
            ("learning_rate", self.learning_rate),
            ("gamma", self.gamma),
            ("lam", self.lam),
            ("clip_eps", self.clip_eps),
            ("vf_coef", self.vf_coef),
            ("ent_coef", self.ent_coef),
            ("kl_teacher_coef", self.kl_teacher_coef),
            ("rho_bar", self.rho_bar),
            ("c_bar", self.c_bar),
            ("elo_sigma", self.elo_sigma),
        ];
        for (name, v) in reals {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} = {v}")));
            }
        }
        if self.learning_rate <= 0.0 {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad(format!("lam must be in [0, 1], got {}", self.lam));
        }
        for (name, v) in [
            ("clip_eps", self.clip_eps),
            ("rho_bar", self.rho_bar),
            ("c_bar", self.c_bar),
            ("elo_sigma", self.elo_sigma),
        ] {
            if v <= 0.0 {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("vf_coef", self.vf_coef),
            ("ent_coef", self.ent_coef),
            ("kl_teacher_coef", self.kl_teacher_coef),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.c_bar > self.rho_bar {
            return bad(format!(
                "c_bar ({}) must not exceed rho_bar ({})",
                self.c_bar, self.rho_bar
            ));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("unroll_len", self.unroll_len),
            ("max_reuse", self.max_reuse),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }
}
