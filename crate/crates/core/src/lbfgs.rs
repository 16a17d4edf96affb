//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the gradient's infinity norm is at or below this.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
    /// Line search gives up once the bracket is narrower than this along the direction.
    pub step_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            grad_tol: 1e-7,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 20,
            step_tol: 1e-14,
        }
    }
}

/// Objective value and gradient at one point, plus caller data carried into the trace.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub aux: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// The line search found no sufficient decrease; the best point so far is returned.
    LineSearchFailed,
    /// A value or gradient was NaN or infinite during this iteration.
    NonFinite {
        iteration: usize,
    },
}

/// One accepted iterate. Iteration 0 is the starting point.
#[derive(Clone, Debug)]
pub struct Record<T> {
    pub iteration: usize,
    pub value: f64,
    pub aux: T,
}

#[derive(Clone, Debug)]
pub struct Outcome<T> {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
    pub history: Vec<Record<T>>,
}

/// Stored curvature pairs `(s, y, 1 / s.y)` and the initial inverse-Hessian scale.
#[derive(Clone, Debug)]
pub struct CurvatureHistory {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    gamma: f64,
}

impl CurvatureHistory {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
            gamma: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Stores the pair if `s.y > 1e-10 |s||y|`; returns whether it was stored.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let (ns, ny) = (dot(&s, &s).sqrt(), dot(&y, &y).sqrt());
        if sy.is_nan() || sy <= 1e-10 * ns * ny || self.memory == 0 {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.gamma = sy / (ny * ny);
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
        self.gamma = 1.0;
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs
            .iter()
            .map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Two-loop recursion: `-H g` for the implicit inverse Hessian of `history`.
pub fn two_loop_direction(history: &CurvatureHistory, gradient: &[f64]) -> Vec<f64> {
    let mut q = gradient.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    for v in &mut q {
        *v *= history.gamma;
    }
    for ((s, y, rho), a) in history.pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for v in &mut q {
        *v = -*v;
    }
    q
}

/// Minimizer of the cubic through two points with known slopes, clamped to `bounds`.
fn cubic_interpolate(p1: (f64, f64, f64), p2: (f64, f64, f64), bounds: Option<(f64, f64)>) -> f64 {
    let ((x1, f1, g1), (x2, f2, g2)) = (p1, p2);
    let (lo, hi) = bounds.unwrap_or((x1.min(x2), x1.max(x2)));
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    (lo + hi) / 2.0
}

struct Probe<T> {
    t: f64,
    value: f64,
    gradient: Vec<f64>,
    gtd: f64,
    aux: Option<T>,
}

enum Search<T> {
    Found(Probe<T>),
    Failed(Probe<T>),
    NonFinite,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    evaluations: usize,
}

impl<F, T> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<Evaluation<T>>,
{
    fn probe(&mut self, t: f64) -> Result<Option<Probe<T>>> {
        let point: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + t * d).collect();
        let e = (self.objective)(&point)?;
        self.evaluations += 1;
        if !e.value.is_finite() || e.gradient.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let gtd = dot(&e.gradient, self.d);
        Ok(Some(Probe {
            t,
            value: e.value,
            gradient: e.gradient,
            gtd,
            aux: Some(e.aux),
        }))
    }

    /// Bracketing followed by zoom, both driven by cubic interpolation.
    fn run(&mut self, start: Probe<T>, t0: f64, cfg: &LbfgsConfig) -> Result<Search<T>> {
        let (f0, gtd0) = (start.value, start.gtd);
        let d_norm = inf_norm(self.d);
        // Armijo, or its derivative form (approximate Wolfe) once value
        // differences are lost to rounding near a minimum.
        let armijo = |p: &Probe<T>| {
            p.value > f0 + cfg.c1 * p.t * gtd0
                && !(p.value <= f0 && p.gtd <= (2.0 * cfg.c1 - 1.0) * gtd0)
        };
        let curvature = |p: &Probe<T>| p.gtd.abs() <= -cfg.c2 * gtd0;

        let Some(mut new) = self.probe(t0)? else {
            return Ok(Search::NonFinite);
        };
        let mut prev = start;
        let mut evals = 1;
        let mut bracket: [Probe<T>; 2];
        loop {
            if armijo(&new) || (evals > 1 && new.value >= prev.value) {
                bracket = [prev, new];
                break;
            }
            if curvature(&new) {
                return Ok(Search::Found(new));
            }
            if new.gtd >= 0.0 {
                bracket = [prev, new];
                break;
            }
            if evals >= cfg.max_line_search {
                return Ok(Search::Failed(new));
            }
            let bounds = (new.t + 0.01 * (new.t - prev.t), new.t * 10.0);
            let t = cubic_interpolate(
                (prev.t, prev.value, prev.gtd),
                (new.t, new.value, new.gtd),
                Some(bounds),
            );
            let Some(next) = self.probe(t)? else {
                return Ok(Search::NonFinite);
            };
            evals += 1;
            prev = std::mem::replace(&mut new, next);
        }

        let mut low = if bracket[0].value <= bracket[1].value {
            0
        } else {
            1
        };
        let mut insufficient = false;
        while evals < cfg.max_line_search {
            let (a, b) = (bracket[0].t, bracket[1].t);
            if (b - a).abs() * d_norm < cfg.step_tol {
                break;
            }
            let (lo, hi) = (a.min(b), a.max(b));
            let mut t = cubic_interpolate(
                (a, bracket[0].value, bracket[0].gtd),
                (b, bracket[1].value, bracket[1].gtd),
                None,
            );
            let eps = 0.1 * (hi - lo);
            if (hi - t).min(t - lo) < eps {
                if insufficient || t >= hi || t <= lo {
                    t = if (t - hi).abs() < (t - lo).abs() {
                        hi - eps
                    } else {
                        lo + eps
                    };
                    insufficient = false;
                } else {
                    insufficient = true;
                }
            } else {
                insufficient = false;
            }
            let Some(p) = self.probe(t)? else {
                return Ok(Search::NonFinite);
            };
            evals += 1;
            let high = 1 - low;
            if armijo(&p) || p.value >= bracket[low].value {
                bracket[high] = p;
            } else {
                if curvature(&p) {
                    return Ok(Search::Found(p));
                }
                if p.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                    bracket.swap(0, 1);
                }
                bracket[low] = p;
                continue;
            }
            low = if bracket[0].value <= bracket[1].value {
                0
            } else {
                1
            };
        }
        let [b0, b1] = bracket;
        Ok(Search::Failed(if low == 0 { b0 } else { b1 }))
    }
}

/// Minimizes `objective` from `x0`.
///
/// Objective errors are propagated. Non-finite values end the run with
/// [`Status::NonFinite`] and the last accepted point.
pub fn minimize<T, F>(mut objective: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<Outcome<T>>
where
    F: FnMut(&[f64]) -> Result<Evaluation<T>>,
{
    let first = objective(&x0)?;
    let mut outcome = Outcome {
        x: x0,
        value: first.value,
        iterations: 0,
        evaluations: 1,
        status: Status::MaxIterations,
        history: Vec::new(),
    };
    if !first.value.is_finite() || first.gradient.iter().any(|v| !v.is_finite()) {
        outcome.status = Status::NonFinite { iteration: 0 };
        return Ok(outcome);
    }
    let mut g = first.gradient;
    outcome.history.push(Record {
        iteration: 0,
        value: first.value,
        aux: first.aux,
    });
    let mut memory = CurvatureHistory::new(cfg.memory);

    for iteration in 1..=cfg.max_iterations {
        if inf_norm(&g) <= cfg.grad_tol {
            outcome.status = Status::Converged;
            return Ok(outcome);
        }
        // On a failed search the curvature memory is dropped and the search
        // retried once from steepest descent.
        let (step, d) = loop {
            let mut d = two_loop_direction(&memory, &g);
            let mut gtd = dot(&g, &d);
            if gtd.is_nan() || gtd >= 0.0 {
                memory.clear();
                d = g.iter().map(|v| -v).collect();
                gtd = dot(&g, &d);
            }
            let t0 = if memory.is_empty() {
                1.0f64.min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>())
            } else {
                1.0
            };
            let start = Probe {
                t: 0.0,
                value: outcome.value,
                gradient: g.clone(),
                gtd,
                aux: None,
            };
            let mut search = LineSearch {
                objective: &mut objective,
                x: &outcome.x,
                d: &d,
                evaluations: 0,
            };
            let result = search.run(start, t0, cfg)?;
            outcome.evaluations += search.evaluations;
            match result {
                Search::Found(p) => break (p, d),
                Search::NonFinite => {
                    outcome.status = Status::NonFinite { iteration };
                    return Ok(outcome);
                }
                // A kink can rule out the curvature condition; a sufficient decrease is still progress.
                Search::Failed(p)
                    if p.t > 0.0
                        && p.value < outcome.value
                        && p.value <= outcome.value + cfg.c1 * p.t * gtd =>
                {
                    log::debug!(
                        "iteration {iteration}: accepting a step without the curvature condition"
                    );
                    break (p, d);
                }
                Search::Failed(_) if !memory.is_empty() => {
                    log::debug!("iteration {iteration}: line search failed, restarting from steepest descent");
                    memory.clear();
                }
                Search::Failed(p) => {
                    log::warn!("line search failed at iteration {iteration}");
                    if p.value < outcome.value {
                        for (x, di) in outcome.x.iter_mut().zip(&d) {
                            *x += p.t * di;
                        }
                        outcome.value = p.value;
                    }
                    outcome.status = Status::LineSearchFailed;
                    return Ok(outcome);
                }
            }
        };
        let s: Vec<f64> = d.iter().map(|v| step.t * v).collect();
        let y: Vec<f64> = step.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (x, si) in outcome.x.iter_mut().zip(&s) {
            *x += si;
        }
        memory.push(s, y);
        g = step.gradient;
        outcome.value = step.value;
        outcome.iterations = iteration;
        outcome.history.push(Record {
            iteration,
            value: step.value,
            aux: step.aux.expect("accepted probes carry aux"),
        });
    }
    outcome.status = if inf_norm(&g) <= cfg.grad_tol {
        Status::Converged
    } else {
        Status::MaxIterations
    };
    Ok(outcome)
}
