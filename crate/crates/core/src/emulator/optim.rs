//! Multi-start L-BFGS maximization over unconstrained parameters.

use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

use crate::error::{Error, Result};

/// Maps an unconstrained value onto `[lo, hi]` through a logistic curve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bounded {
    pub lo: f64,
    pub hi: f64,
}

impl Bounded {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bounded { lo, hi }
    }

    pub fn value(self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * sigmoid(u)
    }

    /// d value / du
    pub fn slope(self, u: f64) -> f64 {
        let s = sigmoid(u);
        (self.hi - self.lo) * s * (1.0 - s)
    }

    pub fn inverse(self, v: f64) -> f64 {
        let p = ((v - self.lo) / (self.hi - self.lo)).clamp(1e-6, 1.0 - 1e-6);
        (p / (1.0 - p)).ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

struct Evaluation {
    u: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// Minimizes the negated objective while remembering the best point seen,
/// so a failed line search still yields a usable answer.
struct Negated<'a, F> {
    f: &'a F,
    last: Mutex<Option<Evaluation>>,
    best: Mutex<Option<(f64, Vec<f64>)>>,
}

impl<F> Negated<'_, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&self, u: &[f64]) -> std::result::Result<(f64, Vec<f64>), argmin::core::Error> {
        let mut last = self.last.lock().expect("evaluation cache poisoned");
        if let Some(e) = last.as_ref() {
            if e.u == u {
                return Ok((e.value, e.grad.clone()));
            }
        }
        let (v, g) = (self.f)(u).map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite objective"));
        }
        let mut best = self.best.lock().expect("best tracker poisoned");
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            *best = Some((v, u.to_vec()));
        }
        let neg_grad: Vec<f64> = g.iter().map(|x| -x).collect();
        *last = Some(Evaluation {
            u: u.to_vec(),
            value: -v,
            grad: neg_grad.clone(),
        });
        Ok((-v, neg_grad))
    }
}

impl<F> CostFunction for Negated<'_, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.eval(u).map(|(v, _)| v)
    }
}

impl<F> Gradient for Negated<'_, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.eval(u).map(|(_, g)| g)
    }
}

/// Result of a multi-start maximization.
pub(crate) struct Maximum {
    pub u: Vec<f64>,
}

/// Maximizes `f` (value and gradient) from each start in turn and keeps the
/// best point found. Ties go to the earliest start.
pub(crate) fn maximize<F>(f: &F, starts: &[Vec<f64>], max_iters: u64) -> Result<Maximum>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut overall: Option<(f64, Vec<f64>)> = None;
    let mut failed = 0;
    for start in starts {
        let problem = Negated {
            f,
            last: Mutex::new(None),
            best: Mutex::new(None),
        };
        let linesearch = MoreThuenteLineSearch::new();
        let solver = LBFGS::new(linesearch, 7)
            .with_tolerance_grad(1e-6)
            .and_then(|s| s.with_tolerance_cost(1e-10))
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        let outcome = Executor::new(&problem, solver)
            .configure(|state| state.param(start.clone()).max_iters(max_iters))
            .run();
        if let Ok(res) = &outcome {
            let state = res.state();
            if let Some(p) = state.get_best_param() {
                let v = -state.get_best_cost();
                let mut best = problem.best.lock().expect("best tracker poisoned");
                if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v > *b) {
                    *best = Some((v, p.clone()));
                }
            }
        } else {
            failed += 1;
        }
        let found = problem.best.into_inner().expect("best tracker poisoned");
        if let Some((v, u)) = found {
            if overall.as_ref().is_none_or(|(b, _)| v > *b) {
                overall = Some((v, u));
            }
        }
    }
    if failed > 0 {
        log::debug!("{failed} of {} optimizer starts stopped early", starts.len());
    }
    match overall {
        Some((value, u)) => {
            log::debug!("best objective {value}");
            Ok(Maximum { u })
        }
        None => Err(Error::Optimizer("objective could not be evaluated at any start".into())),
    }
}

impl<'a, F> CostFunction for &Negated<'a, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        (*self).cost(u)
    }
}

impl<'a, F> Gradient for &Negated<'a, F>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        (*self).gradient(u)
    }
}
