//! Limited-memory BFGS minimization with a strong-Wolfe line search.

use std::collections::VecDeque;

/// Why the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Infinity norm of the gradient fell below the tolerance.
    Gradient,
    /// Relative objective change fell below the tolerance, or the line search
    /// could not make progress.
    Objective,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub obj_rel_tol: f64,
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-5,
            obj_rel_tol: 1e-9,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub line_search_failed: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// A point with its objective value and gradient.
#[derive(Debug, Clone)]
struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Counter<F> {
    func: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> Point {
        let mut g = vec![0.0; x.len()];
        let f = (self.func)(x, &mut g);
        self.evaluations += 1;
        let f = if f.is_finite() && g.iter().all(|v| v.is_finite()) {
            f
        } else {
            f64::INFINITY
        };
        Point { x: x.to_vec(), f, g }
    }
}

/// Minimizes `func`, which returns the objective at `x` and writes its
/// gradient into the second argument. Non-finite values are treated as
/// "step too long" by the line search.
///
/// Returns `None` when the objective is not finite at `x0`.
pub fn minimize<F>(func: F, x0: &[f64], config: &LbfgsConfig) -> Option<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut counter = Counter {
        func,
        evaluations: 0,
    };
    let mut cur = counter.eval(x0);
    if !cur.f.is_finite() {
        return None;
    }
    let mut trace = vec![cur.f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;
    let mut line_search_failed = false;

    let termination = loop {
        if inf_norm(&cur.g) <= config.grad_tol {
            break Termination::Gradient;
        }
        if iterations >= config.max_iters {
            break Termination::MaxIters;
        }

        let mut dir = two_loop(&cur.g, &history);
        let mut slope = dot(&dir, &cur.g);
        if !(slope < 0.0) {
            history.clear();
            dir = cur.g.iter().map(|g| -g).collect();
            slope = dot(&dir, &cur.g);
        }
        let step0 = if history.is_empty() {
            (1.0 / inf_norm(&cur.g)).min(1.0)
        } else {
            1.0
        };

        let Some(next) = line_search(&mut counter, &cur, &dir, slope, step0, config) else {
            line_search_failed = true;
            break Termination::Objective;
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let prev_f = cur.f;
        cur = next;
        trace.push(cur.f);
        if (prev_f - cur.f).abs() <= config.obj_rel_tol * prev_f.abs().max(cur.f.abs()).max(1.0) {
            break if inf_norm(&cur.g) <= config.grad_tol {
                Termination::Gradient
            } else {
                Termination::Objective
            };
        }
    };

    Some(LbfgsOutcome {
        x: cur.x,
        f: cur.f,
        grad: cur.g,
        iterations,
        evaluations: counter.evaluations,
        termination,
        line_search_failed,
        trace,
    })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Bracketing and zoom phases of a strong-Wolfe search along `dir`.
/// Every returned point satisfies sufficient decrease.
fn line_search<F>(
    counter: &mut Counter<F>,
    start: &Point,
    dir: &[f64],
    slope0: f64,
    step0: f64,
    config: &LbfgsConfig,
) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let f0 = start.f;
    let armijo = |step: f64, f: f64| f <= f0 + config.c1 * step * slope0;
    let curvature = |slope: f64| slope.abs() <= -config.c2 * slope0;

    let mut eval_at = |step: f64| -> (Point, f64) {
        let x: Vec<f64> = start.x.iter().zip(dir).map(|(x, d)| x + step * d).collect();
        let p = counter.eval(&x);
        let slope = dot(&p.g, dir);
        (p, slope)
    };

    // Best sufficient-decrease point seen, the fallback on failure.
    let mut best: Option<Point> = None;
    let keep_best = |best: &mut Option<Point>, p: &Point| {
        if best.as_ref().is_none_or(|b| p.f < b.f) {
            *best = Some(p.clone());
        }
    };

    let mut evals = 0;
    let (mut lo_step, mut lo_f, mut lo_slope) = (0.0, f0, slope0);
    let mut step = step0;
    let (mut hi_step, mut hi_f, mut hi_slope);
    loop {
        let (p, slope) = eval_at(step);
        evals += 1;
        if !p.f.is_finite() || !armijo(step, p.f) || (evals > 1 && p.f >= lo_f) {
            hi_step = step;
            hi_f = p.f;
            hi_slope = slope;
            break;
        }
        keep_best(&mut best, &p);
        if curvature(slope) {
            return Some(p);
        }
        if slope >= 0.0 {
            hi_step = lo_step;
            hi_f = lo_f;
            hi_slope = lo_slope;
            lo_step = step;
            lo_f = p.f;
            lo_slope = slope;
            break;
        }
        lo_step = step;
        lo_f = p.f;
        lo_slope = slope;
        step *= 4.0;
        if evals >= config.max_line_evals {
            return best;
        }
    }

    while evals < config.max_line_evals {
        let width = hi_step - lo_step;
        if width.abs() <= 1e-14 * lo_step.abs().max(1e-14) {
            break;
        }
        let trial = interpolate(lo_step, lo_f, lo_slope, hi_step, hi_f, hi_slope);
        let lower = lo_step.min(hi_step);
        let upper = lo_step.max(hi_step);
        let margin = 0.1 * (upper - lower);
        let trial = trial.clamp(lower + margin, upper - margin);

        let (p, slope) = eval_at(trial);
        evals += 1;
        if !p.f.is_finite() || !armijo(trial, p.f) || p.f >= lo_f {
            hi_step = trial;
            hi_f = p.f;
            hi_slope = slope;
        } else {
            keep_best(&mut best, &p);
            if curvature(slope) {
                return Some(p);
            }
            if slope * (hi_step - lo_step) >= 0.0 {
                hi_step = lo_step;
                hi_f = lo_f;
                hi_slope = lo_slope;
            }
            lo_step = trial;
            lo_f = p.f;
            lo_slope = slope;
        }
    }
    best
}

/// Minimizer of the cubic through two points with slopes; bisection when
/// that is undefined.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let mid = 0.5 * (a + b);
    if !(fb.is_finite() && db.is_finite()) {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if t.is_finite() {
        t
    } else {
        mid
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
