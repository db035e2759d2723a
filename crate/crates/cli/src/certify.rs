//! Runs a theorem budget and checks its guarantee empirically.

use adacrit_core::optim::{decrease_audit, DecreaseAudit};
use adacrit_core::{TheoremBudget, TheoremId};
use serde::Serialize;

use crate::config::{ExperimentConfig, RuleKind};
use crate::error::HarnessError;
use crate::experiment::{execute, RunOutput};
use crate::registry::Problem;
use crate::trace_io::fmt_f64;

/// Tolerance on the per-step decrease inequality, relative to `1 + |f|`.
pub const DECREASE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    /// Exact constants and the guarantee held.
    Certified,
    /// Exact constants and the guarantee failed.
    Miss,
    /// A hypothesis of the theorem failed on the visited iterates.
    Voided,
    /// Estimated constants; the outcome is reported but certifies nothing.
    Advisory,
    /// The theorem gives no explicit iteration count; only the observed
    /// hitting time is reported.
    NoExplicitBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub points_checked: u64,
    pub violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreconditionerReport {
    pub lower: f64,
    pub upper: f64,
    pub entries_checked: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertReport {
    pub theorem: TheoremId,
    pub status: CertStatus,
    pub hit: bool,
    pub epsilon: f64,
    /// The quantity compared against: `eps`, or `slack * eps^2` for
    /// stochastic budgets.
    pub threshold: f64,
    pub max_steps: Option<u64>,
    pub hitting_time: Option<u64>,
    /// Smallest observed criticality measure up to the step cap.
    pub best_value: Option<f64>,
    pub alpha_rule: String,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advisory_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decrease: Option<DecreaseAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_condition: Option<SignReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preconditioner: Option<PreconditionerReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diverged: Vec<String>,
    pub budget: TheoremBudget,
    /// `(t, min over s <= t)` of the criticality measure.
    #[serde(skip)]
    pub min_curve: Vec<(u64, f64)>,
    #[serde(skip)]
    pub runs: Vec<RunOutput>,
}

impl CertReport {
    /// True unless the report is a miss or voided.
    pub fn passed(&self) -> bool {
        !matches!(self.status, CertStatus::Miss | CertStatus::Voided)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("t,min_so_far\n");
        for (t, v) in &self.min_curve {
            s.push_str(&format!("{t},{}\n", fmt_f64(*v)));
        }
        s
    }

    pub fn summary(&self) -> String {
        let measure = if self.theorem.is_stochastic() {
            "min_t mean |grad f|^2"
        } else {
            "min_t |grad f|"
        };
        let mut s = format!(
            "{}: {:?}; {measure} = {} vs {:.6e}; T = {}; t* = {}; rule {}",
            self.theorem,
            self.status,
            self.best_value.map_or("n/a".into(), |v| format!("{v:.6e}")),
            self.threshold,
            self.max_steps.map_or("none".into(), |t| t.to_string()),
            self.hitting_time.map_or("none".into(), |t| t.to_string()),
            self.alpha_rule,
        );
        if let Some(d) = &self.decrease {
            s.push_str(&format!(
                "; decrease audit {} steps, {} violations, worst slack {:.3e}",
                d.steps_checked, d.violations, d.worst_slack
            ));
        }
        if let Some(sc) = &self.sign_condition {
            match &sc.violation {
                Some(v) => s.push_str(&format!("; SIGN CONDITION VIOLATED ({v})")),
                None => s.push_str(&format!("; sign condition holds at {} iterates", sc.points_checked)),
            }
        }
        if let Some(p) = &self.preconditioner {
            s.push_str(&format!(
                "; preconditioner {} entries, {} violations",
                p.entries_checked, p.violations
            ));
        }
        if let Some(r) = &self.advisory_reason {
            s.push_str(&format!("; advisory: {r}"));
        }
        for d in &self.diverged {
            s.push_str(&format!("; diverged: {d}"));
        }
        s
    }
}

fn running_min(points: impl IntoIterator<Item = (u64, f64)>) -> Vec<(u64, f64)> {
    let mut m = f64::INFINITY;
    points
        .into_iter()
        .map(|(t, v)| {
            m = m.min(v);
            (t, m)
        })
        .collect()
}

fn precond_report(runs: &[RunOutput]) -> Option<PreconditionerReport> {
    let audits: Vec<_> = runs.iter().filter_map(|r| r.preconditioner.as_ref()).collect();
    let first = audits.first()?;
    Some(PreconditionerReport {
        lower: first.lower,
        upper: first.upper,
        entries_checked: audits.iter().map(|a| a.entries_checked).sum(),
        violations: audits.iter().map(|a| a.violations).sum(),
    })
}

/// Runs `cfg` under its `[budget]` and reports whether the guarantee held.
pub fn certify(cfg: &ExperimentConfig, problem: &Problem) -> Result<CertReport, HarnessError> {
    let spec = cfg
        .budget
        .clone()
        .ok_or_else(|| HarnessError::Config("certify needs a [budget] section".into()))?;
    let mut run_cfg = cfg.clone();
    run_cfg.optimizer.rule = RuleKind::Budget;
    run_cfg.run.eval_every = 1;
    run_cfg.run.lambda_stride = None;
    let stochastic = spec.theorem.is_stochastic();
    // stochastic guarantees are about every t <= T, so never stop early
    run_cfg.run.eps = if stochastic { 0.0 } else { spec.eps };
    let seeds: Vec<u64> = if stochastic { cfg.seeds.clone() } else { vec![cfg.seeds[0]] };

    let runs = seeds
        .iter()
        .map(|&s| execute(&run_cfg, problem, s, stochastic))
        .collect::<Result<Vec<_>, _>>()?;
    let budget = runs[0].budget.clone().expect("budget rule yields a budget");
    let cap = budget.max_steps;
    let diverged: Vec<String> = runs
        .iter()
        .filter_map(|r| r.diverged.as_ref().map(|d| format!("seed {}: {d}", r.seed)))
        .collect();

    let (threshold, min_curve) = if stochastic {
        let thr = spec.slack * spec.eps * spec.eps;
        let rows = runs.iter().map(|r| r.trace.len()).min().unwrap_or(0);
        let curve = (0..rows).map(|i| {
            let t = runs[0].trace.rows[i].t;
            let mean = runs.iter().map(|r| r.trace.rows[i].grad_norm.powi(2)).sum::<f64>() / runs.len() as f64;
            (t, mean)
        });
        (thr, running_min(curve.filter(|(t, _)| cap.is_none_or(|c| *t <= c))))
    } else {
        let curve = runs[0].trace.rows.iter().map(|r| (r.t, r.grad_norm));
        (spec.eps, running_min(curve.filter(|(t, _)| cap.is_none_or(|c| *t <= c))))
    };
    let best_value = min_curve.last().map(|p| p.1);
    let hitting_time = min_curve.iter().find(|(_, v)| *v <= threshold).map(|p| p.0);
    let hit = hitting_time.is_some() && diverged.is_empty();

    let decrease = (spec.theorem == TheoremId::RmsDet && runs[0].diverged.is_none())
        .then(|| decrease_audit(&runs[0].trace, budget.derived("delta_sq").unwrap_or(0.0), DECREASE_TOL));

    let sign_condition = (spec.theorem == TheoremId::RmsStoch).then(|| {
        let audits: Vec<(u64, &crate::experiment::SignAudit)> =
            runs.iter().filter_map(|r| r.sign_audit.as_ref().map(|a| (r.seed, a))).collect();
        SignReport {
            points_checked: audits.iter().map(|(_, a)| a.points_checked).sum(),
            violation: audits.iter().find_map(|(seed, a)| {
                a.first_violation.map(|(t, coord, p, q)| {
                    format!("seed {seed}, t = {t}, coordinate {coord}: components {p} and {q} disagree")
                })
            }),
        }
    });

    let meta = problem.meta();
    let advisory_reason = (!meta.is_exact()).then(|| {
        let mut what = Vec::new();
        if meta.lipschitz_estimated {
            what.push("L");
        }
        if meta.sigma_estimated {
            what.push("sigma");
        }
        format!("{} estimated, not exact", what.join(" and "))
    });
    let voided = sign_condition.as_ref().is_some_and(|s| s.violation.is_some());
    let decrease_ok = decrease.as_ref().is_none_or(DecreaseAudit::holds);
    let status = if advisory_reason.is_some() {
        CertStatus::Advisory
    } else if voided {
        CertStatus::Voided
    } else if cap.is_none() {
        CertStatus::NoExplicitBound
    } else if hit && decrease_ok {
        CertStatus::Certified
    } else {
        CertStatus::Miss
    };

    Ok(CertReport {
        theorem: spec.theorem,
        status,
        hit,
        epsilon: spec.eps,
        threshold,
        max_steps: cap,
        hitting_time,
        best_value,
        alpha_rule: budget.alpha_rule.to_string(),
        seeds,
        advisory_reason,
        decrease,
        sign_condition,
        preconditioner: precond_report(&runs),
        diverged,
        budget,
        min_curve,
        runs,
    })
}
