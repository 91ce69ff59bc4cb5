use super::Params;
use crate::{Error, Result};

/// Stochastic gradient descent with classic momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Params>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and non-negative")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} must lie in [0, 1)")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    /// Apply one update. Non-finite gradients abort the step and leave both
    /// parameters and velocity untouched.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        if let Some((name, _, _)) = grads
            .named()
            .into_iter()
            .find(|(_, _, v)| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Training(format!("non-finite gradient in {name}")));
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let gs = grads.named();
        let mut vs = velocity.named_mut();
        let mut ps = params.named_mut();
        if gs.len() != ps.len() {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        for ((p, v), g) in ps.iter_mut().zip(vs.iter_mut()).zip(&gs) {
            if p.1.len() != g.2.len() {
                return Err(Error::Shape(format!("gradient for {} has the wrong size", p.0)));
            }
            for ((pi, vi), gi) in p.1.iter_mut().zip(v.1.iter_mut()).zip(g.2) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

/// Single stateless step (zero initial velocity).
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64, momentum: f64) -> Result<()> {
    Sgd::new(lr, momentum)?.step(params, grads)
}
