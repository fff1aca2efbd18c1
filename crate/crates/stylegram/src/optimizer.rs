//! L-BFGS with a strong-Wolfe line search, plus a fixed-step gradient
//! descent fallback for objectives whose gradient is deliberately
//! inconsistent with the loss (masked style gradients).
//!
//! The implementation is the standard two-loop recursion with a
//! bracket-and-zoom line search. Everything is sequential plain `f64`,
//! so two runs from identical inputs produce bit-identical traces.

use std::collections::VecDeque;
use std::fmt;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH_EVALS: usize = 25;
const CURVATURE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    /// Loss or gradient went non-finite at the named iteration.
    NonFinite { iteration: usize },
    /// Line search was handed an ascent (or flat) direction.
    NotDescent { slope: f64 },
    /// Invalid hyper-parameter.
    BadParam(&'static str),
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::NonFinite { iteration } => {
                write!(f, "non-finite loss or gradient at iteration {iteration}")
            }
            OptimError::NotDescent { slope } => {
                write!(
                    f,
                    "line search needs a descent direction, got slope {slope}"
                )
            }
            OptimError::BadParam(what) => write!(f, "invalid optimizer parameter: {what}"),
        }
    }
}

impl std::error::Error for OptimError {}

/// Final optimizer state: the iterate, the retained curvature pairs and the
/// per-accepted-step loss trace (the entry at index 0 is the initial loss).
#[derive(Debug, Clone)]
pub struct OptState {
    pub iterate: Vec<f64>,
    /// Last `m` (step, gradient-difference) pairs, oldest first.
    pub history: Vec<(Vec<f64>, Vec<f64>)>,
    /// Loop passes entered before returning.
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    /// Line searches that fell back to a plain Armijo step because no
    /// strong-Wolfe point appeared within the evaluation budget.
    pub line_search_warnings: usize,
}

impl OptState {
    /// Accepted steps, i.e. how often the iterate actually moved.
    pub fn accepted_steps(&self) -> usize {
        self.loss_trace.len().saturating_sub(1)
    }
}

/// Outcome of one line search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// Both strong Wolfe conditions hold; `false` means the Armijo fallback.
    pub wolfe_satisfied: bool,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Two-loop recursion: multiply the gradient by the implicit inverse
/// Hessian approximation and negate, yielding the search direction.
fn search_direction(history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, grad: &[f64]) -> Vec<f64> {
    let mut q = grad.to_vec();
    if history.is_empty() {
        for v in &mut q {
            *v = -*v;
        }
        return q;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = rho * dot(s, &q);
        axpy(&mut q, -alpha, y);
        alphas.push(alpha);
    }
    let (s_last, y_last, _) = history.back().expect("non-empty");
    let gamma = dot(s_last, y_last) / dot(y_last, y_last);
    for v in &mut q {
        *v *= gamma;
    }
    for ((s, y, rho), alpha) in history.iter().zip(alphas.iter().rev()) {
        let beta = rho * dot(y, &q);
        axpy(&mut q, alpha - beta, s);
    }
    for v in &mut q {
        *v = -*v;
    }
    q
}

struct ProbePoint {
    step: f64,
    loss: f64,
    slope: f64,
    gradient: Vec<f64>,
}

impl ProbePoint {
    fn shallow(&self) -> ProbePoint {
        ProbePoint {
            step: self.step,
            loss: self.loss,
            slope: self.slope,
            gradient: self.gradient.clone(),
        }
    }
}

/// Bracket-and-zoom strong-Wolfe search along `direction` from `x`.
///
/// `f0`/`g0` are the already-evaluated loss and gradient at `x`. Within
/// [`MAX_LINE_SEARCH_EVALS`] objective evaluations this either returns a
/// point satisfying both Wolfe conditions, or falls back to the best point
/// seen that satisfies Armijo alone (flagged via `wolfe_satisfied: false`).
/// `Ok(None)` means not even an Armijo point exists in budget.
fn wolfe_search<F>(
    objective: &F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    direction: &[f64],
    initial_step: f64,
    iteration: usize,
) -> Result<Option<LineSearchResult>, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let slope0 = dot(g0, direction);
    if slope0 >= 0.0 {
        return Err(OptimError::NotDescent { slope: slope0 });
    }

    let mut evals = 0usize;
    let probe = |t: f64, evals: &mut usize| -> Result<ProbePoint, OptimError> {
        let mut point = x.to_vec();
        axpy(&mut point, t, direction);
        let (loss, gradient) = objective(&point);
        *evals += 1;
        if !loss.is_finite() || !all_finite(&gradient) {
            return Err(OptimError::NonFinite { iteration });
        }
        let slope = dot(&gradient, direction);
        Ok(ProbePoint {
            step: t,
            loss,
            slope,
            gradient,
        })
    };

    let armijo = |t: f64, loss: f64| loss <= f0 + C1 * t * slope0;
    let curvature = |slope: f64| slope.abs() <= -C2 * slope0;

    let mut best_armijo: Option<ProbePoint> = None;
    let keep_best = |p: &ProbePoint, best: &mut Option<ProbePoint>| {
        if armijo(p.step, p.loss) && best.as_ref().is_none_or(|b| p.loss < b.loss) {
            *best = Some(p.shallow());
        }
    };

    let finish = |p: ProbePoint, wolfe: bool, evals: usize| LineSearchResult {
        step: p.step,
        loss: p.loss,
        gradient: p.gradient,
        wolfe_satisfied: wolfe,
        evaluations: evals,
    };

    // bracketing phase
    let mut prev = ProbePoint {
        step: 0.0,
        loss: f0,
        slope: slope0,
        gradient: g0.to_vec(),
    };
    let mut t = initial_step.max(f64::MIN_POSITIVE);
    let mut bracket: Option<(ProbePoint, ProbePoint)> = None;
    let mut first = true;
    while evals < MAX_LINE_SEARCH_EVALS {
        let current = probe(t, &mut evals)?;
        if !armijo(current.step, current.loss) || (!first && current.loss >= prev.loss) {
            bracket = Some((prev, current));
            break;
        }
        keep_best(&current, &mut best_armijo);
        if curvature(current.slope) {
            return Ok(Some(finish(current, true, evals)));
        }
        if current.slope >= 0.0 {
            bracket = Some((current, prev));
            break;
        }
        t = current.step * 2.0;
        prev = current;
        first = false;
    }

    // zoom phase: lo tracks the lowest Armijo-satisfying loss seen so far
    if let Some((mut lo, mut hi)) = bracket {
        while evals < MAX_LINE_SEARCH_EVALS {
            let width = (hi.step - lo.step).abs();
            if width <= 1e-16 * lo.step.abs().max(1.0) {
                break;
            }
            let current = probe(0.5 * (lo.step + hi.step), &mut evals)?;
            if !armijo(current.step, current.loss) || current.loss >= lo.loss {
                hi = current;
            } else {
                keep_best(&current, &mut best_armijo);
                if curvature(current.slope) {
                    return Ok(Some(finish(current, true, evals)));
                }
                if current.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo.shallow();
                }
                lo = current;
            }
        }
    }

    Ok(best_armijo.map(|p| finish(p, false, evals)))
}

/// Strong-Wolfe line search from `x` along a descent `direction`.
///
/// Evaluates the objective at `x` once for the reference values, then runs
/// the bracket-and-zoom procedure.
pub fn strong_wolfe_line_search<F>(
    objective: F,
    x: &[f64],
    direction: &[f64],
    initial_step: f64,
) -> Result<LineSearchResult, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if initial_step <= 0.0 {
        return Err(OptimError::BadParam("initial_step must be positive"));
    }
    let (f0, g0) = objective(x);
    if !f0.is_finite() || !all_finite(&g0) {
        return Err(OptimError::NonFinite { iteration: 0 });
    }
    match wolfe_search(&objective, x, f0, &g0, direction, initial_step, 0)? {
        Some(result) => Ok(result),
        None => Err(OptimError::BadParam("no Armijo step found within budget")),
    }
}

/// L-BFGS minimization with strong-Wolfe steps.
///
/// Runs at most `iterations` outer iterations with `memory` retained
/// curvature pairs; pairs with `<s, y>` at or below a small floor are
/// skipped. The first line search starts at `1 / |grad|`, later ones at 1.
/// Stops early at an exactly stationary point or when no acceptable step
/// exists, so the loss trace is non-increasing across accepted steps.
pub fn lbfgs_run<F>(
    objective: F,
    x0: &[f64],
    iterations: usize,
    memory: usize,
) -> Result<OptState, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    lbfgs_run_with(objective, x0, iterations, memory, |_, _, _| {})
}

/// [`lbfgs_run`] with a per-accepted-step callback `(iteration, loss, x)`.
pub fn lbfgs_run_with<F, C>(
    objective: F,
    x0: &[f64],
    iterations: usize,
    memory: usize,
    mut on_step: C,
) -> Result<OptState, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    C: FnMut(usize, f64, &[f64]),
{
    if iterations == 0 {
        return Err(OptimError::BadParam("iterations must be >= 1"));
    }
    if memory == 0 {
        return Err(OptimError::BadParam("memory must be >= 1"));
    }

    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x);
    if !f.is_finite() || !all_finite(&g) {
        return Err(OptimError::NonFinite { iteration: 0 });
    }
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut warnings = 0usize;
    let mut iterations_run = 0usize;

    for iteration in 1..=iterations {
        iterations_run = iteration;
        let gnorm = norm(&g);
        if gnorm == 0.0 {
            break;
        }

        let mut direction = search_direction(&history, &g);
        if dot(&g, &direction) >= 0.0 {
            // curvature information went stale; restart from steepest descent
            history.clear();
            direction = g.iter().map(|v| -v).collect();
        }
        let initial_step = if iteration == 1 { 1.0 / gnorm } else { 1.0 };

        let result = wolfe_search(&objective, &x, f, &g, &direction, initial_step, iteration)?;
        let Some(accepted) = result else {
            break;
        };
        if !accepted.wolfe_satisfied {
            warnings += 1;
        }

        let step: Vec<f64> = direction.iter().map(|d| d * accepted.step).collect();
        let grad_diff: Vec<f64> = accepted
            .gradient
            .iter()
            .zip(&g)
            .map(|(new, old)| new - old)
            .collect();
        if dot(&step, &grad_diff) > CURVATURE_FLOOR {
            if history.len() == memory {
                history.pop_front();
            }
            let rho = 1.0 / dot(&step, &grad_diff);
            history.push_back((step.clone(), grad_diff, rho));
        }

        axpy(&mut x, 1.0, &step);
        f = accepted.loss;
        g = accepted.gradient;
        trace.push(f);
        on_step(iteration, f, &x);
    }

    Ok(OptState {
        iterate: x,
        history: history.into_iter().map(|(s, y, _)| (s, y)).collect(),
        iterations: iterations_run,
        loss_trace: trace,
        line_search_warnings: warnings,
    })
}

/// Fixed-step gradient descent; no line search, no Wolfe requirement.
///
/// This is the driver for masked-gradient runs where the reported gradient
/// intentionally disagrees with the objective.
pub fn gd_run<F>(
    objective: F,
    x0: &[f64],
    iterations: usize,
    step: f64,
) -> Result<OptState, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    gd_run_with(objective, x0, iterations, step, |_, _, _| {})
}

/// [`gd_run`] with a per-step callback `(iteration, loss, x)`.
pub fn gd_run_with<F, C>(
    objective: F,
    x0: &[f64],
    iterations: usize,
    step: f64,
    mut on_step: C,
) -> Result<OptState, OptimError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    C: FnMut(usize, f64, &[f64]),
{
    if step <= 0.0 {
        return Err(OptimError::BadParam("step must be positive"));
    }
    if iterations == 0 {
        return Err(OptimError::BadParam("iterations must be >= 1"));
    }
    let mut x = x0.to_vec();
    let (f, mut g) = objective(&x);
    if !f.is_finite() || !all_finite(&g) {
        return Err(OptimError::NonFinite { iteration: 0 });
    }
    let mut trace = vec![f];
    let mut iterations_run = 0usize;
    for iteration in 1..=iterations {
        iterations_run = iteration;
        axpy(&mut x, -step, &g);
        let (f_new, g_new) = objective(&x);
        if !f_new.is_finite() || !all_finite(&g_new) {
            return Err(OptimError::NonFinite { iteration });
        }
        g = g_new;
        trace.push(f_new);
        on_step(iteration, f_new, &x);
    }
    Ok(OptState {
        iterate: x,
        history: Vec::new(),
        iterations: iterations_run,
        loss_trace: trace,
        line_search_warnings: 0,
    })
}
