//! Sharpness-aware minimization over a flat parameter vector.
//!
//! Each step evaluates the gradient `g1` at `w`, moves to the ascent point
//! `w + rho·g1/(‖g1‖ + eps_guard)`, and hands the gradient found there to a
//! plain SGD or momentum-SGD update of `w`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A differentiable objective: returns the loss and its gradient at `w`.
pub trait Objective<T> {
    fn evaluate(&mut self, w: &[T]) -> (T, Vec<T>);
}

impl<T, F> Objective<T> for F
where
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    fn evaluate(&mut self, w: &[T]) -> (T, Vec<T>) {
        self(w)
    }
}

/// Update rule applied with the perturbed gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseOptimizer<T> {
    Sgd {
        lr: T,
    },
    /// `v ← μ·v + g`, `w ← w − lr·v`.
    SgdMomentum {
        lr: T,
        momentum: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamConfig<T> {
    pub rho: T,
    pub eps_guard: T,
    pub base: BaseOptimizer<T>,
    pub steps: usize,
}

impl<T: Real> SamConfig<T> {
    /// Defaults for `rho` and `eps_guard` with the given base optimizer.
    pub fn new(base: BaseOptimizer<T>, steps: usize) -> Self {
        Self { rho: T::lit(0.05), eps_guard: T::lit(1e-12), base, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho < T::zero() {
            return Err(Error::InvalidParameter("rho must be finite and non-negative".into()));
        }
        if !self.eps_guard.is_finite() || self.eps_guard < T::zero() {
            return Err(Error::InvalidParameter("eps_guard must be finite and non-negative".into()));
        }
        let (lr, momentum) = match self.base {
            BaseOptimizer::Sgd { lr } => (lr, T::zero()),
            BaseOptimizer::SgdMomentum { lr, momentum } => (lr, momentum),
        };
        if !(lr > T::zero()) || !lr.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(momentum >= T::zero()) || !momentum.is_finite() {
            return Err(Error::InvalidParameter("momentum must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn checked_eval<T: Real, F: Objective<T> + ?Sized>(f: &mut F, w: &[T]) -> Result<(T, Vec<T>)> {
    let (loss, grad) = f.evaluate(w);
    if grad.len() != w.len() {
        return Err(Error::ShapeMismatch(format!(
            "objective returned {} gradient entries for {} parameters",
            grad.len(),
            w.len()
        )));
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::ObjectiveDiverged);
    }
    Ok((loss, grad))
}

/// Stateful optimizer; keeps the momentum buffer between steps.
#[derive(Debug, Clone)]
pub struct Sam<T> {
    config: SamConfig<T>,
    velocity: Vec<T>,
}

impl<T: Real> Sam<T> {
    pub fn new(config: SamConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, velocity: Vec::new() })
    }

    pub fn config(&self) -> &SamConfig<T> {
        &self.config
    }

    /// One SAM step from `w`.
    pub fn step<F: Objective<T> + ?Sized>(&mut self, w: &[T], f: &mut F) -> Result<Vec<T>> {
        let (_, g1) = checked_eval(f, w)?;
        self.step_from(w, &g1, f)
    }

    fn step_from<F: Objective<T> + ?Sized>(&mut self, w: &[T], g1: &[T], f: &mut F) -> Result<Vec<T>> {
        let g1_norm = norm(g1);
        let scale = if g1_norm > T::zero() { self.config.rho / (g1_norm + self.config.eps_guard) } else { T::zero() };
        let probe: Vec<T> = w.iter().zip(g1).map(|(&wi, &gi)| wi + scale * gi).collect();
        let (_, g2) = checked_eval(f, &probe)?;

        Ok(match self.config.base {
            BaseOptimizer::Sgd { lr } => w.iter().zip(&g2).map(|(&wi, &gi)| wi - lr * gi).collect(),
            BaseOptimizer::SgdMomentum { lr, momentum } => {
                if self.velocity.len() != w.len() {
                    self.velocity = vec![T::zero(); w.len()];
                }
                self.velocity.iter_mut().zip(&g2).for_each(|(v, &g)| *v = momentum * *v + g);
                w.iter().zip(&self.velocity).map(|(&wi, &vi)| wi - lr * vi).collect()
            }
        })
    }
}

/// A single step with a fresh optimizer state.
pub fn sam_step<T: Real, F: Objective<T> + ?Sized>(w: &[T], f: &mut F, config: &SamConfig<T>) -> Result<Vec<T>> {
    Sam::new(*config)?.step(w, f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint<T> {
    pub step: usize,
    pub loss: T,
    pub grad_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult<T> {
    /// `steps + 1` entries; entry `k` is evaluated at the iterate before step `k`.
    pub trace: Vec<TracePoint<T>>,
    pub w: Vec<T>,
}

/// Runs `config.steps` SAM steps from `w0`.
pub fn optimize<T: Real, F: Objective<T> + ?Sized>(
    f: &mut F,
    w0: &[T],
    config: &SamConfig<T>,
) -> Result<OptimizeResult<T>> {
    if config.steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let mut sam = Sam::new(*config)?;
    let mut w = w0.to_vec();
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let (loss, grad) = checked_eval(f, &w)?;
        trace.push(TracePoint { step, loss, grad_norm: norm(&grad) });
        if step < config.steps {
            w = sam.step_from(&w, &grad, f)?;
        }
    }
    Ok(OptimizeResult { trace, w })
}
