//! Step-size and momentum grid search with the interior rule: while the best
//! step size sits on an edge of the grid, the grid grows past that edge.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, GridSpec, OptimizerSpec, RuleKind};
use crate::error::HarnessError;
use crate::experiment::execute;
use crate::registry::Problem;
use crate::trace_io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub alpha: f64,
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub xi: f64,
}

impl Cell {
    fn key(&self) -> [u64; 5] {
        [self.alpha, self.mu, self.beta1, self.beta2, self.xi].map(f64::to_bits)
    }

    fn tie_break(&self, other: &Cell) -> Ordering {
        [self.alpha, self.mu, self.beta1, self.beta2, self.xi]
            .iter()
            .zip([other.alpha, other.mu, other.beta1, other.beta2, other.xi].iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    pub fn apply(&self, base: &OptimizerSpec) -> OptimizerSpec {
        OptimizerSpec {
            alpha: Some(self.alpha),
            mu: Some(self.mu),
            beta1: Some(self.beta1),
            beta2: Some(self.beta2),
            xi: Some(self.xi),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: Cell,
    pub best_loss: f64,
    /// Every evaluated cell, best first.
    pub cells: Vec<(Cell, f64)>,
    pub extensions: u32,
    /// The best step size lies strictly inside the final step-size axis.
    pub interior: bool,
    pub alphas: Vec<f64>,
}

impl GridOutcome {
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["alpha", "mu", "beta1", "beta2", "xi", "final_loss"]).expect("in-memory write");
        for (c, l) in &self.cells {
            w.write_record([c.alpha, c.mu, c.beta1, c.beta2, c.xi, *l].map(fmt_f64))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

fn axis(values: &[f64], default: f64) -> Vec<f64> {
    let mut v = if values.is_empty() { vec![default] } else { values.to_vec() };
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn ranked(a: &(Cell, f64), b: &(Cell, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.tie_break(&b.0))
}

/// Evaluates cells with `evaluate` (final training loss; non-finite means
/// diverged) and returns the best. Ties go to the smaller step size. The
/// result does not depend on the order of the listed values.
pub fn grid_search_with<F>(grid: &GridSpec, base: &OptimizerSpec, evaluate: F) -> Result<GridOutcome, HarnessError>
where
    F: Fn(&Cell) -> f64 + Sync,
{
    let mut alphas = axis(&grid.alpha, f64::NAN);
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(HarnessError::Config("grid.alpha must contain positive step sizes".into()));
    }
    let ratio = if alphas.len() > 1 {
        (alphas[alphas.len() - 1] / alphas[0]).powf(1.0 / (alphas.len() - 1) as f64)
    } else {
        10.0
    };
    let mus = axis(&grid.mu, base.mu());
    let b1s = axis(&grid.beta1, base.beta1());
    let b2s = axis(&grid.beta2, base.beta2());
    let xis = axis(&grid.xi, base.xi());

    let mut cache: BTreeMap<[u64; 5], (Cell, f64)> = BTreeMap::new();
    let mut extensions = 0;
    loop {
        let mut todo = Vec::new();
        for &alpha in &alphas {
            for &mu in &mus {
                for &beta1 in &b1s {
                    for &beta2 in &b2s {
                        for &xi in &xis {
                            let c = Cell { alpha, mu, beta1, beta2, xi };
                            if !cache.contains_key(&c.key()) {
                                todo.push(c);
                            }
                        }
                    }
                }
            }
        }
        let done: Vec<(Cell, f64)> = todo
            .par_iter()
            .map(|c| {
                let l = evaluate(c);
                (*c, if l.is_finite() { l } else { f64::INFINITY })
            })
            .collect();
        for (c, l) in done {
            cache.insert(c.key(), (c, l));
        }
        let best = *cache.values().min_by(|a, b| ranked(a, b)).expect("grid is non-empty");
        if !best.1.is_finite() {
            let cells: Vec<String> = cache.values().map(|(c, _)| format!("alpha={:e}", c.alpha)).collect();
            return Err(HarnessError::AllDiverged(cells.join(", ")));
        }
        let lo = alphas[0];
        let hi = alphas[alphas.len() - 1];
        let at_edge = best.0.alpha == lo || best.0.alpha == hi;
        if grid.interior_rule && at_edge && extensions < grid.max_extensions {
            if best.0.alpha == hi {
                alphas.push(hi * ratio);
            } else {
                alphas.insert(0, lo / ratio);
            }
            extensions += 1;
            continue;
        }
        let mut cells: Vec<(Cell, f64)> = cache.into_values().collect();
        cells.sort_by(ranked);
        return Ok(GridOutcome {
            best: best.0,
            best_loss: best.1,
            cells,
            extensions,
            interior: alphas.len() >= 3 && !at_edge,
            alphas,
        });
    }
}

/// Grid search for `cfg`, scoring each cell by its final training loss
/// averaged over `cfg.seeds`.
pub fn tune(cfg: &ExperimentConfig, grid: &GridSpec, problem: &Problem) -> Result<GridOutcome, HarnessError> {
    if cfg.optimizer.rule == RuleKind::Budget {
        return Err(HarnessError::Config("grid search needs a tunable step-size rule, not \"budget\"".into()));
    }
    let mut base = cfg.clone();
    let steps = grid.max_steps.unwrap_or(cfg.run.max_steps);
    base.run.max_steps = steps;
    base.run.eval_every = steps.max(1);
    base.run.lambda_stride = None;
    base.run.eps = 0.0;
    let failure = std::sync::Mutex::new(None);
    let out = grid_search_with(grid, &cfg.optimizer, |cell| {
        let mut c = base.clone();
        c.optimizer = cell.apply(&cfg.optimizer);
        let mut total = 0.0;
        for &seed in &cfg.seeds {
            match execute(&c, problem, seed, false) {
                Ok(o) => total += o.final_loss(),
                Err(e) => {
                    failure.lock().expect("unpoisoned").get_or_insert(e);
                    return f64::INFINITY;
                }
            }
        }
        total / cfg.seeds.len() as f64
    });
    if let Some(e) = failure.into_inner().expect("unpoisoned") {
        return Err(e);
    }
    out
}
