//! L-BFGS with a strong-Wolfe bracket-and-zoom line search.

use std::collections::VecDeque;
use std::io::Write;

use crate::control_space::{ControlHistory, ControlParameterization};
use crate::cost::{csv_err, Objective};
use crate::error::{Error, Result};
use crate::grid_field::{dot, norm};
use crate::sensitivity_loop::integrate_adjoint;
use crate::timeloop::{DynamicalSystem, RkClock, StoreMode, TrajectoryStore};

/// Objective and gradient evaluator.
pub trait Problem {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Control problem: one forward and one adjoint sweep per evaluation.
pub struct ControlProblem<'a, S: ?Sized, O> {
    pub system: &'a S,
    pub clock: RkClock,
    pub u0: Vec<f64>,
    pub param: ControlParameterization,
    pub objective: O,
    pub store: TrajectoryStore,
    pub evaluations: usize,
}

impl<'a, S: DynamicalSystem + ?Sized, O: Objective> ControlProblem<'a, S, O> {
    pub fn new(
        system: &'a S,
        clock: RkClock,
        u0: Vec<f64>,
        param: ControlParameterization,
        objective: O,
        store: TrajectoryStore,
    ) -> Self {
        Self {
            system,
            clock,
            u0,
            param,
            objective,
            store,
            evaluations: 0,
        }
    }

    pub fn in_memory(system: &'a S, clock: RkClock, u0: Vec<f64>, param: ControlParameterization, objective: O) -> Self {
        Self::new(system, clock, u0, param, objective, TrajectoryStore::in_memory(StoreMode::StoreAll))
    }
}

impl<S: DynamicalSystem + ?Sized, O: Objective> Problem for ControlProblem<'_, S, O> {
    fn dim(&self) -> usize {
        self.param.control_len()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let controls = ControlHistory::new(self.param.clone(), x.to_vec())?;
        let run = integrate_adjoint(self.system, &self.clock, &self.u0, Some(&controls), &mut self.store, &self.objective)?;
        Ok((run.forward.cost, run.gradient))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub initial_step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 1.0,
            max_iters: 100,
            grad_tol: 1e-8,
            max_evals: 30,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Validation(format!(
                "Wolfe constants need 0 < c1 < c2 < 1, got {} and {}",
                self.c1, self.c2
            )));
        }
        if !(self.initial_step > 0.0) || self.max_evals == 0 {
            return Err(Error::Validation("initial step and evaluation budget must be positive".into()));
        }
        Ok(())
    }
}

/// Curvature pairs `(dx, dg)`, newest last.
#[derive(Clone, Debug, Default)]
pub struct LbfgsState {
    pub memory: usize,
    pub pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub skipped: usize,
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::new(),
            skipped: 0,
        }
    }

    /// Admits a pair when `<dx, dg> > 0`; returns whether it was kept.
    pub fn push(&mut self, dx: Vec<f64>, dg: Vec<f64>) -> bool {
        if self.memory == 0 {
            return false;
        }
        if !(dot(&dx, &dg) > 0.0) {
            self.skipped += 1;
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((dx, dg));
        true
    }

    /// Two-loop recursion `-H g`.
    pub fn direction(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            for (qv, yv) in q.iter_mut().zip(y) {
                *qv -= a * yv;
            }
            alphas.push((a, rho));
        }
        if let Some((s, y)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qv, sv) in q.iter_mut().zip(s) {
                *qv += (a - b) * sv;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        Ok(q)
    }
}

#[derive(Clone, Debug)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub evals: usize,
}

struct Trial {
    alpha: f64,
    f: f64,
    dg: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn trial<P: Problem + ?Sized>(problem: &mut P, x: &[f64], d: &[f64], alpha: f64) -> Option<Trial> {
    let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    match problem.evaluate(&xt) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some(Trial {
            alpha,
            f,
            dg: dot(&g, d),
            x: xt,
            g,
        }),
        _ => None,
    }
}

/// Minimizer of the cubic through two points with slopes, safeguarded to
/// the inner part of the interval.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dg * hi.dg;
    let width = (b - a).abs();
    let (left, right) = (a.min(b), a.max(b));
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.dg + d2 - d1) / (hi.dg - lo.dg + 2.0 * d2);
    if t.is_finite() && t > left + 0.1 * width && t < right - 0.1 * width {
        t
    } else {
        mid
    }
}

/// Step satisfying the strong Wolfe conditions along descent direction `d`.
pub fn wolfe_search<P: Problem + ?Sized>(
    problem: &mut P,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    opts: &LbfgsOptions,
) -> Result<LineSearchResult> {
    let dg0 = dot(g0, d);
    if !(dg0 < 0.0) {
        return Err(Error::LineSearch(format!("direction is not a descent direction (<g, d> = {dg0:e})")));
    }
    let armijo = |t: &Trial| t.f <= f0 + opts.c1 * t.alpha * dg0;
    let curvature = |t: &Trial| t.dg.abs() <= -opts.c2 * dg0;
    let done = |t: Trial, evals: usize| LineSearchResult {
        alpha: t.alpha,
        x: t.x,
        f: t.f,
        g: t.g,
        evals,
    };
    let mut evals = 0;
    let mut prev = Trial {
        alpha: 0.0,
        f: f0,
        dg: dg0,
        x: x.to_vec(),
        g: g0.to_vec(),
    };
    let mut alpha = opts.initial_step;
    let mut first = true;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        if evals >= opts.max_evals {
            return Err(Error::LineSearch("line search failed: evaluation budget exhausted".into()));
        }
        evals += 1;
        let Some(cur) = trial(problem, x, d, alpha) else {
            // evaluator failure: shrink towards the last good point
            alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
            continue;
        };
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(done(cur, evals));
        }
        if cur.dg >= 0.0 {
            break (cur, prev);
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
        first = false;
    };
    // zoom phase; `lo` satisfies Armijo with the lowest value seen
    loop {
        if evals >= opts.max_evals {
            return Err(Error::LineSearch("line search failed: zoom did not converge".into()));
        }
        evals += 1;
        let a = interpolate(&lo, &hi);
        let Some(cur) = trial(problem, x, d, a) else {
            hi = Trial {
                alpha: a,
                f: f64::INFINITY,
                dg: 0.0,
                x: Vec::new(),
                g: Vec::new(),
            };
            continue;
        };
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(done(cur, evals));
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            return Err(Error::LineSearch("line search failed: interval collapsed".into()));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed(String),
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub history: Vec<HistoryRow>,
    pub termination: Termination,
    pub skipped_pairs: usize,
}

/// L-BFGS iterations from `x0`; every accepted iterate lowers the cost.
pub fn optimize_control<P: Problem + ?Sized>(problem: &mut P, x0: &[f64], opts: &LbfgsOptions) -> Result<OptimizeResult> {
    opts.validate()?;
    let (mut f, mut g) = problem.evaluate(x0)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("initial cost".into()));
    }
    let mut x = x0.to_vec();
    let mut state = LbfgsState::new(opts.memory);
    let mut history = vec![HistoryRow {
        iteration: 0,
        cost: f,
        grad_norm: norm(&g),
        alpha: 0.0,
        evaluations: 1,
    }];
    let mut termination = Termination::MaxIterations;
    for it in 1..=opts.max_iters {
        if norm(&g) <= opts.grad_tol {
            termination = Termination::Converged;
            break;
        }
        let mut d = state.direction(&g)?;
        if !(dot(&d, &g) < 0.0) {
            state.pairs.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let ls = match wolfe_search(problem, &x, f, &g, &d, opts) {
            Ok(ls) => ls,
            Err(Error::LineSearch(msg)) => {
                termination = Termination::LineSearchFailed(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        let dx: Vec<f64> = ls.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push(dx, dg);
        x = ls.x;
        f = ls.f;
        g = ls.g;
        history.push(HistoryRow {
            iteration: it,
            cost: f,
            grad_norm: norm(&g),
            alpha: ls.alpha,
            evaluations: ls.evals,
        });
    }
    if termination == Termination::MaxIterations && norm(&g) <= opts.grad_tol {
        termination = Termination::Converged;
    }
    Ok(OptimizeResult {
        x,
        cost: f,
        gradient: g,
        history,
        termination,
        skipped_pairs: state.skipped,
    })
}

/// Writes `iteration,cost,grad_norm,alpha,evaluations` rows.
pub fn write_history_csv<W: Write>(w: W, history: &[HistoryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iteration", "cost", "grad_norm", "alpha", "evaluations"])
        .map_err(csv_err)?;
    for r in history {
        wtr.write_record(&[
            r.iteration.to_string(),
            format!("{:.17e}", r.cost),
            format!("{:.17e}", r.grad_norm),
            format!("{:.17e}", r.alpha),
            r.evaluations.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}
