//! One-dimensional gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Value(f64),
    /// Uniform draw from `[0, 10]`.
    Random {
        seed: u64,
    },
}

impl Init {
    pub fn resolve(self) -> f64 {
        match self {
            Init::Value(x) => x,
            Init::Random { seed } => ChaCha8Rng::seed_from_u64(seed).random_range(0.0..=10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub step_size: f64,
    pub max_iters: u64,
    pub tol: f64,
    pub fd_step: f64,
    pub init: Init,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            max_iters: 1_000_000,
            tol: 1e-8,
            fd_step: 1e-6,
            init: Init::Random { seed: 0 },
        }
    }
}

impl GdConfig {
    pub fn starting_at(x: f64) -> Self {
        Self {
            init: Init::Value(x),
            ..Self::default()
        }
    }

    pub fn with_step(mut self, step_size: f64) -> Self {
        self.step_size = step_size;
        self
    }

    pub fn validate(&self) -> Result<(), GdError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step_size) || !positive(self.tol) || !positive(self.fd_step) || self.max_iters == 0 {
            return Err(GdError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOutcome {
    pub x: f64,
    pub iterations: u64,
    /// False when the iteration budget ran out before the step fell below
    /// the tolerance; `x` is still the last iterate.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GdError {
    #[error("diverged at iteration {iteration} (x = {x})")]
    Diverged { iteration: u64, x: f64 },
    #[error("invalid gradient descent config: {0}")]
    InvalidConfig(String),
}

/// Divides by the representable spacing rather than `2h`, so a stencil that
/// collapses to a single point (large `|x|`) yields NaN instead of a silent 0.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let (hi, lo) = (x + h, x - h);
    (f(hi) - f(lo)) / (hi - lo)
}

/// Minimises `f` using a central-difference derivative.
pub fn gradient_descent(f: impl Fn(f64) -> f64, cfg: &GdConfig) -> Result<GdOutcome, GdError> {
    let h = cfg.fd_step;
    descend(&f, |x| central_difference(&f, x, h), cfg, |_, _| {})
}

/// Minimises `f` with a caller-supplied derivative.
pub fn gradient_descent_with(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    cfg: &GdConfig,
) -> Result<GdOutcome, GdError> {
    descend(&f, df, cfg, |_, _| {})
}

/// Like [`gradient_descent`] but records every iterate, starting point
/// included.
pub fn gradient_descent_trace(f: impl Fn(f64) -> f64, cfg: &GdConfig) -> (Result<GdOutcome, GdError>, Vec<f64>) {
    let h = cfg.fd_step;
    let mut xs = Vec::new();
    let out = descend(&f, |x| central_difference(&f, x, h), cfg, |_, x| xs.push(x));
    (out, xs)
}

fn descend(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    cfg: &GdConfig,
    mut on_iterate: impl FnMut(u64, f64),
) -> Result<GdOutcome, GdError> {
    cfg.validate()?;
    let mut x = cfg.init.resolve();
    let check = |iteration: u64, x: f64| {
        if !x.is_finite() || x.abs() > DIVERGENCE_BOUND || !f(x).is_finite() {
            Err(GdError::Diverged { iteration, x })
        } else {
            Ok(())
        }
    };
    check(0, x)?;
    on_iterate(0, x);
    for k in 1..=cfg.max_iters {
        let g = df(x);
        if !g.is_finite() {
            return Err(GdError::Diverged { iteration: k, x });
        }
        let next = x - cfg.step_size * g;
        check(k, next)?;
        on_iterate(k, next);
        let step = (next - x).abs();
        x = next;
        if step < cfg.tol {
            return Ok(GdOutcome {
                x,
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(GdOutcome {
        x,
        iterations: cfg.max_iters,
        converged: false,
    })
}
