//! Shift sensitivity: one run per value of `xi`.

use crate::config::{ExperimentConfig, SweepMode, SweepSpec};
use crate::error::HarnessError;
use crate::experiment::{execute, RunOutput};
use crate::grid::tune;
use crate::plot::{Column, Figure};
use crate::registry::Problem;
use crate::trace_io::fmt_f64;

/// A finished run together with the exact configuration that replays it.
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub label: String,
    pub config: ExperimentConfig,
    pub output: RunOutput,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<LabeledRun>,
}

impl SweepOutcome {
    /// `xi,alpha,seed,final_loss,final_test_loss,min_grad_norm,diverged`.
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["xi", "alpha", "seed", "final_loss", "final_test_loss", "min_grad_norm", "diverged"])
            .expect("in-memory write");
        for r in &self.runs {
            let o = &r.output;
            let last = o.trace.last();
            w.write_record([
                fmt_f64(r.config.optimizer.xi()),
                r.config.optimizer.alpha.map(fmt_f64).unwrap_or_default(),
                o.seed.to_string(),
                fmt_f64(o.final_loss()),
                last.and_then(|l| l.f_test).map(fmt_f64).unwrap_or_default(),
                o.min_grad_norm().map(fmt_f64).unwrap_or_default(),
                o.diverged.is_some().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Training loss, test loss and gradient norm for the first seed.
    pub fn figure(&self, title: &str) -> Figure {
        let seed = self.runs.first().map(|r| r.output.seed);
        let runs: Vec<(String, &adacrit_core::Trace)> = self
            .runs
            .iter()
            .filter(|r| Some(r.output.seed) == seed)
            .map(|r| (r.label.clone(), &r.output.trace))
            .collect();
        three_panel(title, &runs)
    }
}

pub fn three_panel(title: &str, runs: &[(String, &adacrit_core::Trace)]) -> Figure {
    Figure {
        title: title.to_string(),
        panels: [Column::Loss, Column::TestLoss, Column::GradNorm]
            .iter()
            .map(|c| c.panel(runs))
            .collect(),
    }
}

pub fn xi_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec, problem: &Problem) -> Result<SweepOutcome, HarnessError> {
    let mut runs = Vec::new();
    for &xi in &sweep.xi {
        let mut c = cfg.clone();
        c.optimizer.xi = Some(xi);
        if sweep.mode == SweepMode::Tuned {
            let mut grid = cfg
                .grid
                .clone()
                .ok_or_else(|| HarnessError::Config("tuned sweeps need a [grid] section".into()))?;
            grid.xi = vec![xi];
            let best = tune(&c, &grid, problem)?;
            c.optimizer = best.best.apply(&c.optimizer);
        }
        for &seed in &cfg.seeds {
            let output = execute(&c, problem, seed, false)?;
            runs.push(LabeledRun {
                label: format!("xi={xi:e}"),
                config: c.clone(),
                output,
            });
        }
    }
    Ok(SweepOutcome { runs })
}
