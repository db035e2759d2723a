//! Runs one configuration under one seed.

use adacrit_core::autoenc::MinibatchOracle;
use adacrit_core::optim::{
    step, FullGradient, GradientOracle, OptimizerState, PreconditionerAudit, StepInfo, StochasticGradient,
};
use adacrit_core::rng::{seeded, stream};
use adacrit_core::schedules::{adam_theorem_params, rmsprop_det_budget, rmsprop_noshift_budget, rmsprop_stoch_budget};
use adacrit_core::spectrum::{LanczosResult, MinEigTracker};
use adacrit_core::{
    run_with, FiniteSumObjective, Error, Method, Observer, OptimizerConfig, StepRule, StopRule, TheoremBudget, TheoremId, Trace, TraceRecord,
};

use crate::config::{ExperimentConfig, RuleKind};
use crate::error::HarnessError;
use crate::registry::Problem;

/// Everything a run produced. A diverged run is an outcome, not an error.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub budget: Option<TheoremBudget>,
    pub max_steps: u64,
    pub trace: Trace,
    pub final_x: Option<Vec<f64>>,
    pub diverged: Option<String>,
    pub preconditioner: Option<PreconditionerAudit>,
    pub lanczos: Vec<(u64, LanczosResult)>,
    /// Sign-condition audit over every visited iterate, when requested.
    pub sign_audit: Option<SignAudit>,
}

/// Coordinatewise sign agreement of the component gradients along a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignAudit {
    pub points_checked: u64,
    /// First `(t, coordinate, p, q)` where components `p` and `q` disagree.
    pub first_violation: Option<(u64, usize, usize, usize)>,
}

impl RunOutput {
    /// Training loss at the last logged iterate; `+inf` after divergence.
    pub fn final_loss(&self) -> f64 {
        match (&self.diverged, self.trace.last()) {
            (None, Some(r)) => r.f,
            _ => f64::INFINITY,
        }
    }

    pub fn min_grad_norm(&self) -> Option<f64> {
        self.trace.min_grad_norm_upto(u64::MAX)
    }

    pub fn summary(&self) -> String {
        let last = self.trace.last();
        let mut s = format!(
            "seed {}: {} steps, f = {:.6e}, |grad f| = {:.6e}, min |grad f| = {:.6e}",
            self.seed,
            last.map_or(0, |r| r.t.saturating_sub(1)),
            last.map_or(f64::NAN, |r| r.f),
            last.map_or(f64::NAN, |r| r.grad_norm),
            self.min_grad_norm().unwrap_or(f64::NAN),
        );
        if let Some(t) = self.trace.hit {
            s.push_str(&format!(", critical at t = {t}"));
        }
        if let Some(a) = &self.preconditioner {
            s.push_str(&format!(
                ", preconditioner entries {} checked / {} outside [{:.4e}, {:.4e}]",
                a.entries_checked, a.violations, a.lower, a.upper
            ));
        }
        if let Some(d) = &self.diverged {
            s.push_str(&format!(", DIVERGED ({d})"));
        }
        s
    }
}

struct ObserverSet<'a>(Vec<&'a mut dyn Observer>);

impl Observer for ObserverSet<'_> {
    fn observe(&mut self, x: &[f64], row: &mut TraceRecord) -> adacrit_core::Result<()> {
        self.0.iter_mut().try_for_each(|o| o.observe(x, row))
    }
    fn after_step(&mut self, state: &OptimizerState, info: &StepInfo) -> adacrit_core::Result<()> {
        self.0.iter_mut().try_for_each(|o| o.after_step(state, info))
    }
}

struct TestLoss<'a>(&'a Problem);

impl Observer for TestLoss<'_> {
    fn observe(&mut self, x: &[f64], row: &mut TraceRecord) -> adacrit_core::Result<()> {
        if let Some(f) = self.0.test_loss(x) {
            row.f_test = Some(f?);
        }
        Ok(())
    }
}

struct SignObserver<'a> {
    fsum: &'a FiniteSumObjective,
    audit: SignAudit,
}

impl SignObserver<'_> {
    fn check(&mut self, t: u64, x: &[f64]) -> adacrit_core::Result<()> {
        self.audit.points_checked += 1;
        if self.audit.first_violation.is_none() {
            if let Some(v) = self.fsum.check_sign_condition(&[x.to_vec()])?.violation {
                self.audit.first_violation = Some((t, v.coord, v.p, v.q));
            }
        }
        Ok(())
    }
}

impl Observer for SignObserver<'_> {
    fn after_step(&mut self, state: &OptimizerState, _info: &StepInfo) -> adacrit_core::Result<()> {
        self.check(state.t, &state.x)
    }
}

fn need_alpha(cfg: &ExperimentConfig) -> Result<f64, HarnessError> {
    cfg.optimizer
        .alpha
        .ok_or_else(|| HarnessError::Config("optimizer.alpha is required for this rule".into()))
}

/// Theorem budget for `cfg.budget` starting at `x1`.
pub fn compute_budget(cfg: &ExperimentConfig, problem: &Problem, x1: &[f64]) -> Result<TheoremBudget, HarnessError> {
    let b = cfg
        .budget
        .as_ref()
        .ok_or_else(|| HarnessError::Config("a [budget] section is required".into()))?;
    let meta = problem.meta();
    let (beta2, xi) = (cfg.optimizer.beta2(), cfg.optimizer.xi());
    let f1 = problem.obj.eval(x1)?;
    Ok(match b.theorem {
        TheoremId::RmsDet => rmsprop_det_budget(meta, f1, beta2, xi, b.eps)?,
        TheoremId::RmsStoch => {
            if problem.fsum.is_none() {
                return Err(HarnessError::Config("budget rms_stoch needs a finite-sum objective".into()));
            }
            rmsprop_stoch_budget(meta, problem.sigma_f(), f1, beta2, xi, b.eps)?
        }
        TheoremId::RmsNoshift => rmsprop_noshift_budget(meta, need_alpha(cfg)?, beta2, b.eps)?,
        TheoremId::AdamDet => {
            // T depends on f(x_2); the first step does not depend on T
            let probe = adam_theorem_params(meta, f1, beta2, b.eps)?;
            let opt = OptimizerConfig::from_budget(&probe)?;
            let mut s = OptimizerState::new(x1.to_vec());
            step(&mut s, &opt, &problem.obj.grad(x1)?)?;
            adam_theorem_params(meta, problem.obj.eval(&s.x)?, beta2, b.eps)?
        }
    })
}

/// Optimizer, budget and step cap for a run starting at `x1`.
pub fn resolve(
    cfg: &ExperimentConfig,
    problem: &Problem,
    x1: &[f64],
) -> Result<(OptimizerConfig, Option<TheoremBudget>, u64), HarnessError> {
    let o = &cfg.optimizer;
    if o.rule == RuleKind::Budget {
        let budget = compute_budget(cfg, problem, x1)?;
        let opt = OptimizerConfig::from_budget(&budget)?;
        let cap = budget.max_steps.unwrap_or(cfg.run.max_steps);
        return Ok((opt, Some(budget), cap));
    }
    let alpha = need_alpha(cfg)?;
    let rule = match o.rule {
        RuleKind::Constant => StepRule::Constant { alpha },
        RuleKind::InverseSqrt => StepRule::InverseSqrt { alpha0: alpha },
        RuleKind::BiasCorrected => {
            if o.method != Method::Adam {
                return Err(HarnessError::Config("rule bias_corrected applies to adam only".into()));
            }
            StepRule::BiasCorrected {
                alpha,
                beta1: o.beta1(),
                beta2: o.beta2(),
            }
        }
        RuleKind::Budget => unreachable!(),
    };
    let opt = match o.method {
        Method::Nag => OptimizerConfig::nag(rule, o.mu()),
        Method::Rmsprop => OptimizerConfig::rmsprop(rule, o.beta2(), o.xi()),
        Method::Adam => OptimizerConfig::adam(rule, o.beta1(), o.beta2(), o.xi()),
    }
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok((opt, None, cfg.run.max_steps))
}

/// Runs `cfg` under `seed`. With `audit_signs`, every visited iterate of a
/// finite-sum objective is checked for sign agreement of the components.
pub fn execute(
    cfg: &ExperimentConfig,
    problem: &Problem,
    seed: u64,
    audit_signs: bool,
) -> Result<RunOutput, HarnessError> {
    let x1 = problem.start(&cfg.start)?;
    let (opt, budget, max_steps) = resolve(cfg, problem, &x1)?;
    let stochastic = budget.as_ref().is_some_and(|b| b.theorem.is_stochastic()) || cfg.run.stochastic;

    let mut oracle: Box<dyn GradientOracle + '_> = match (&problem.fsum, &problem.autoenc) {
        (Some(fsum), _) if stochastic => Box::new(StochasticGradient {
            fsum,
            rng: seeded(seed, &[stream::ORACLE]),
        }),
        (_, Some(ae)) if cfg.run.minibatch.is_some() => Box::new(MinibatchOracle::new(
            ae.shape,
            ae.train.clone(),
            cfg.run.minibatch.unwrap_or(1),
            seeded(seed, &[stream::ORACLE]),
        )?),
        (None, _) if stochastic => {
            return Err(HarnessError::Config("stochastic runs need a finite-sum objective".into()));
        }
        _ => Box::new(FullGradient(&problem.obj)),
    };

    let mut tracker = cfg
        .run
        .lambda_stride
        .map(|s| MinEigTracker::new(problem.obj.clone(), Some(s), seed));
    let mut audit = match opt.method {
        Method::Rmsprop if opt.xi > 0.0 && !problem.meta().sigma_estimated => {
            Some(PreconditionerAudit::new(problem.sigma_f(), opt.beta2, opt.xi)?)
        }
        _ => None,
    };
    let mut test = TestLoss(problem);
    let mut signs = match &problem.fsum {
        Some(fsum) if audit_signs => {
            let mut o = SignObserver {
                fsum,
                audit: SignAudit::default(),
            };
            o.check(1, &x1)?;
            Some(o)
        }
        _ => None,
    };

    let mut obs: Vec<&mut dyn Observer> = vec![&mut test];
    if let Some(t) = tracker.as_mut() {
        obs.push(t);
    }
    if let Some(a) = audit.as_mut() {
        obs.push(a);
    }
    if let Some(o) = signs.as_mut() {
        obs.push(o);
    }
    let stop = StopRule::new(max_steps, cfg.run.eps).with_eval_every(cfg.run.eval_every);
    let result = run_with(
        OptimizerState::new(x1),
        &opt,
        &problem.obj,
        &mut *oracle,
        &stop,
        ObserverSet(obs),
    );
    let (trace, final_x, diverged) = match result {
        Ok((state, trace)) => (trace, Some(state.x), None),
        Err(Error::Diverged { t, what, trace }) => (*trace, None, Some(format!("{what} not finite at t = {t}"))),
        Err(e) => return Err(e.into()),
    };
    Ok(RunOutput {
        seed,
        optimizer: opt,
        budget,
        max_steps,
        trace,
        final_x,
        diverged,
        preconditioner: audit,
        lanczos: tracker.map(|t| t.results).unwrap_or_default(),
        sign_audit: signs.map(|o| o.audit),
    })
}
