//! Several optimizers on one objective, overlaid in one figure.

use adacrit_core::Method;

use crate::config::{default_variants, ExperimentConfig, RuleKind};
use crate::error::HarnessError;
use crate::experiment::execute;
use crate::grid::{tune, GridOutcome};
use crate::plot::Figure;
use crate::registry::Problem;
use crate::sweep::{three_panel, LabeledRun};

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub tuning: Option<GridOutcome>,
    pub runs: Vec<LabeledRun>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub variants: Vec<VariantResult>,
}

impl CompareOutcome {
    fn first_runs(&self) -> Vec<&LabeledRun> {
        self.variants.iter().filter_map(|v| v.runs.first()).collect()
    }

    pub fn figure(&self, title: &str) -> Figure {
        let runs: Vec<(String, &adacrit_core::Trace)> = self
            .first_runs()
            .into_iter()
            .map(|r| (r.label.clone(), &r.output.trace))
            .collect();
        three_panel(title, &runs)
    }

    /// Observed ordering of the variants, phrased against the qualitative
    /// expectations: ADAM with `beta1 = 0.99` ends with the lowest training
    /// loss, and NAG with the smallest gradient norm.
    pub fn claims(&self) -> Vec<String> {
        let runs = self.first_runs();
        let mut out = Vec::new();
        let final_of = |r: &LabeledRun, grad: bool| {
            r.output
                .trace
                .last()
                .filter(|_| r.output.diverged.is_none())
                .map_or(f64::INFINITY, |l| if grad { l.grad_norm } else { l.f })
        };
        let best = |grad: bool| {
            runs.iter()
                .min_by(|a, b| final_of(a, grad).total_cmp(&final_of(b, grad)))
                .map(|r| (r.label.clone(), final_of(r, grad)))
        };
        for r in &runs {
            let l = r.output.trace.last();
            out.push(format!(
                "{}: alpha = {}, final train loss = {:.6e}, final test loss = {}, final |grad f| = {:.6e}{}",
                r.label,
                r.config.optimizer.alpha.map_or("?".into(), |a| format!("{a:e}")),
                final_of(r, false),
                l.and_then(|l| l.f_test).map_or("n/a".into(), |v| format!("{v:.6e}")),
                final_of(r, true),
                if r.output.diverged.is_some() { " (diverged)" } else { "" },
            ));
        }
        if let Some((label, v)) = best(false) {
            let adam99 = runs
                .iter()
                .any(|r| r.label == label && r.config.optimizer.method == Method::Adam && r.config.optimizer.beta1() >= 0.99);
            out.push(format!(
                "lowest final training loss: {label} ({v:.6e}); ADAM beta1=0.99 dominance {}",
                if adam99 { "observed" } else { "not observed" }
            ));
        }
        if let Some((label, v)) = best(true) {
            let nag = runs
                .iter()
                .any(|r| r.label == label && r.config.optimizer.method == Method::Nag);
            out.push(format!(
                "smallest final gradient norm: {label} ({v:.6e}); NAG gradient-norm advantage {}",
                if nag { "observed" } else { "not observed" }
            ));
        }
        out
    }
}

/// Runs each variant, tuning its step size with `[grid]` when the variant
/// gives none.
pub fn compare(cfg: &ExperimentConfig, problem: &Problem) -> Result<CompareOutcome, HarnessError> {
    if cfg.optimizer.rule == RuleKind::Budget {
        return Err(HarnessError::Config("compare needs a tunable step-size rule, not \"budget\"".into()));
    }
    let variants = cfg.compare.as_ref().map_or_else(default_variants, |c| c.variants.clone());
    let mut results = Vec::new();
    for v in &variants {
        let mut c = cfg.clone();
        c.label = Some(v.label.clone());
        c.optimizer = v.optimizer(cfg.optimizer.rule);
        let tuning = match (v.alpha, &cfg.grid) {
            (Some(_), _) => None,
            (None, Some(grid)) => {
                // only the step size is tuned; the variant fixes the rest
                let mut g = grid.clone();
                g.mu.clear();
                g.beta1.clear();
                g.beta2.clear();
                g.xi.clear();
                let out = tune(&c, &g, problem)?;
                c.optimizer = out.best.apply(&c.optimizer);
                Some(out)
            }
            (None, None) => {
                return Err(HarnessError::Config(format!(
                    "variant {:?} has no alpha and there is no [grid] to tune it",
                    v.label
                )))
            }
        };
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            runs.push(LabeledRun {
                label: v.label.clone(),
                config: c.clone(),
                output: execute(&c, problem, seed, false)?,
            });
        }
        results.push(VariantResult { tuning, runs });
    }
    Ok(CompareOutcome { variants: results })
}
