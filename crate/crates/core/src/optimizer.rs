//! AdaMax and joint refinement of latent codes over a co-visible set.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::objective::{Params, Problem};

/// AdaMax state: `m ← β₁m + (1−β₁)g`, `u ← max(β₂u, |g|)`,
/// `θ ← θ − lr/(1−β₁ᵗ) · m/(u+ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaMaxState {
    pub step: u64,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdaMaxState {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdaMaxState {
            step: 0,
            m: vec![0.0; dim],
            u: vec![0.0; dim],
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    /// Fresh state with the customary defaults (`lr = 1e-3`, `β₁ = 0.9`,
    /// `β₂ = 0.999`, `ε = 1e-8`).
    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, 1e-3, 0.9, 0.999, 1e-8)
    }
}

/// One AdaMax update of `params` in place.
pub fn adamax_step(state: &mut AdaMaxState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::mismatch(state.m.len(), grad.len().min(params.len())));
    }
    let bad: Vec<usize> = grad
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFiniteGradient(bad));
    }
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let step = state.lr / (1.0 - state.beta1.powi(t));
    for ((p, &g), (m, u)) in params.iter_mut().zip(grad).zip(state.m.iter_mut().zip(state.u.iter_mut())) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *u = (state.beta2 * *u).max(g.abs());
        *p -= step * *m / (*u + state.eps);
    }
    Ok(())
}

/// Relative-change stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            rel_tol: 1e-4,
            max_iters: 500,
        }
    }
}

impl StopRule {
    /// `|cur − prev| / max(prev, ε) < rel_tol`.
    pub fn converged(&self, previous: f64, current: f64) -> bool {
        (current - previous).abs() / previous.max(f64::EPSILON) < self.rel_tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Masks are recomputed every this many iterations.
    pub mask_refresh: usize,
    /// Also optimize the per-view mean depths (in log space).
    pub optimize_alpha: bool,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rel_tol: 1e-4,
            max_iters: 500,
            mask_refresh: 10,
            optimize_alpha: false,
            divergence_factor: 1e6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("lr must be positive and betas in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.rel_tol >= 0.0 && self.divergence_factor > 1.0) {
            return Err(Error::invalid("eps, rel_tol or divergence_factor out of range"));
        }
        if self.mask_refresh == 0 {
            return Err(Error::invalid("mask_refresh must be at least 1"));
        }
        Ok(())
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            rel_tol: self.rel_tol,
            max_iters: self.max_iters,
        }
    }
}

/// Why refinement ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    Diverged,
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub clamped: usize,
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    /// Lowest-loss iterate.
    pub params: Params,
    pub best_iteration: usize,
    /// Iteration 0 is the initial evaluation.
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

impl RefineResult {
    pub fn initial_loss(&self) -> f64 {
        self.trace[0].loss.total
    }

    pub fn best_loss(&self) -> f64 {
        self.trace[self.best_iteration].loss.total
    }

    /// Turns a diverged run into [`Error::Diverged`].
    pub fn into_result(self, config: &OptimizerConfig) -> Result<RefineResult> {
        if self.stop == StopReason::Diverged {
            let last = self.trace.last().expect("trace is never empty");
            return Err(Error::Diverged {
                iteration: last.iteration,
                loss: last.loss.total,
                limit: self.initial_loss() * config.divergence_factor,
            });
        }
        Ok(self)
    }
}

fn pack(params: &Params, optimize_alpha: bool) -> Vec<f64> {
    let mut v: Vec<f64> = params.z.iter().flat_map(|z| z.0.iter().copied()).collect();
    if optimize_alpha {
        v.extend(params.alpha.iter().map(|a| a.ln()));
    }
    v
}

fn unpack(flat: &[f64], template: &Params, optimize_alpha: bool) -> Params {
    let mut out = template.clone();
    let mut k = 0;
    for z in &mut out.z {
        for v in &mut z.0 {
            *v = flat[k];
            k += 1;
        }
    }
    if optimize_alpha {
        for a in &mut out.alpha {
            *a = flat[k].exp();
            k += 1;
        }
    }
    out
}

/// Jointly refines all codes (and optionally mean depths) of a co-visible set.
///
/// Divergence does not return an error here; the result carries
/// [`StopReason::Diverged`] together with the trace so callers can inspect
/// it (see [`RefineResult::into_result`]).
pub fn refine_codes(problem: &Problem<'_>, init: Params, config: &OptimizerConfig) -> Result<RefineResult> {
    config.validate()?;
    let stop_rule = config.stop_rule();
    let mut masks = problem.compute_masks(&init)?;
    let first = problem.evaluate(&init, &masks, true)?;
    let initial = first.breakdown.total;
    let limit = initial * config.divergence_factor;
    let mut trace = vec![TraceRow {
        iteration: 0,
        loss: first.breakdown,
        clamped: first.clamped,
    }];
    let mut params = init;
    let mut flat = pack(&params, config.optimize_alpha);
    let mut state = AdaMaxState::new(flat.len(), config.lr, config.beta1, config.beta2, config.eps);
    let mut best = (initial, 0usize, params.clone());
    let mut current = first;
    let mut stop = StopReason::MaxIterations;

    for it in 1..=stop_rule.max_iters {
        let mut grad: Vec<f64> = current.grad_z.iter().flatten().copied().collect();
        if config.optimize_alpha {
            grad.extend(current.grad_alpha.iter().zip(&params.alpha).map(|(g, a)| g * a));
        }
        adamax_step(&mut state, &mut flat, &grad)?;
        params = unpack(&flat, &params, config.optimize_alpha);
        if it % config.mask_refresh == 0 {
            masks = problem.compute_masks(&params)?;
        }
        let previous = current.breakdown.total;
        current = problem.evaluate(&params, &masks, true)?;
        let loss = current.breakdown.total;
        trace.push(TraceRow {
            iteration: it,
            loss: current.breakdown,
            clamped: current.clamped,
        });
        debug!("iteration {it}: loss {loss:.6e}");
        if !loss.is_finite() || loss > limit {
            stop = StopReason::Diverged;
            break;
        }
        if loss < best.0 {
            best = (loss, it, params.clone());
        }
        if stop_rule.converged(previous, loss) {
            stop = StopReason::Converged;
            break;
        }
    }
    info!(
        "refinement stopped ({stop:?}) after {} iterations; loss {:.6e} -> {:.6e}",
        trace.len() - 1,
        initial,
        best.0
    );
    Ok(RefineResult {
        params: best.2,
        best_iteration: best.1,
        trace,
        stop,
    })
}
