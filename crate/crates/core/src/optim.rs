//! NAG, RMSProp and ADAM as single-step state transitions, and a driver that
//! iterates them while logging a [`Trace`].
//!
//! Iterates are indexed from `t = 1`: a fresh [`OptimizerState`] holds `x_1`
//! and each step consumes the gradient at `x_t` to produce `x_{t+1}`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm};
use crate::objective::{FiniteSumObjective, ObjectiveHandle};
use crate::schedules::{StepContext, StepRule, TheoremBudget, TheoremId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nag,
    Rmsprop,
    Adam,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nag => "NAG",
            Method::Rmsprop => "RMSProp",
            Method::Adam => "ADAM",
        })
    }
}

/// Hyperparameters of one optimizer. Fields irrelevant to `method` are
/// ignored by the step functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub alpha_rule: StepRule,
    /// NAG momentum.
    pub mu: f64,
    /// ADAM first-moment decay.
    pub beta1: f64,
    /// Second-moment decay (RMSProp and ADAM).
    pub beta2: f64,
    /// Shift: inside the square root for RMSProp, outside for ADAM.
    pub xi: f64,
}

impl OptimizerConfig {
    pub fn nag(alpha_rule: StepRule, mu: f64) -> Result<Self> {
        Self::checked(Method::Nag, alpha_rule, mu, 0.0, 0.0, 0.0)
    }

    pub fn rmsprop(alpha_rule: StepRule, beta2: f64, xi: f64) -> Result<Self> {
        Self::checked(Method::Rmsprop, alpha_rule, 0.0, 0.0, beta2, xi)
    }

    pub fn adam(alpha_rule: StepRule, beta1: f64, beta2: f64, xi: f64) -> Result<Self> {
        Self::checked(Method::Adam, alpha_rule, 0.0, beta1, beta2, xi)
    }

    /// The optimizer a budget prescribes.
    pub fn from_budget(budget: &TheoremBudget) -> Result<Self> {
        match budget.theorem {
            TheoremId::AdamDet => Self::adam(budget.alpha_rule.clone(), budget.beta1, budget.beta2, budget.xi),
            _ => Self::rmsprop(budget.alpha_rule.clone(), budget.beta2, budget.xi),
        }
    }

    fn checked(method: Method, alpha_rule: StepRule, mu: f64, beta1: f64, beta2: f64, xi: f64) -> Result<Self> {
        let cfg = OptimizerConfig {
            method,
            alpha_rule,
            mu,
            beta1,
            beta2,
            xi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha_rule.validate()?;
        let unit = |name: &'static str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{x} must lie in [0, 1)")))
            }
        };
        unit("mu", self.mu)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::invalid("xi", format!("{} must be non-negative", self.xi)));
        }
        if self.method == Method::Adam && self.xi <= 0.0 {
            return Err(Error::invalid("xi", "ADAM needs xi > 0"));
        }
        Ok(())
    }
}

/// Iterate plus accumulators. For NAG, `v` holds the velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Index of the current iterate `x_t`; starts at 1.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(x1: Vec<f64>) -> Self {
        let d = x1.len();
        OptimizerState {
            x: x1,
            m: vec![0.0; d],
            v: vec![0.0; d],
            t: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// What a single step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Index of the iterate the step started from.
    pub t: u64,
    pub alpha: f64,
    /// Gradient the step consumed.
    pub grad: Vec<f64>,
    /// Previous iterate `x_t`.
    pub x_prev: Vec<f64>,
}

/// `w_i = g_i / sqrt(v_i)` where `v_i > 0` and `0` where `v_i = 0`.
pub fn penrose_sqrt_inv_apply(v: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_dim(v.len(), g.len())?;
    v.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&vi, &gi))| {
            if vi > 0.0 {
                Ok(gi / vi.sqrt())
            } else if vi == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::NegativeAccumulator { index: i, value: vi })
            }
        })
        .collect()
}

fn context<'a>(state: &'a OptimizerState, cfg: &OptimizerConfig, g: &'a [f64]) -> StepContext<'a> {
    StepContext {
        t: state.t,
        grad: g,
        m: &state.m,
        v: &state.v,
        xi: cfg.xi,
    }
}

fn finish(state: &mut OptimizerState, x_prev: Vec<f64>, alpha: f64, g: &[f64]) -> StepInfo {
    let info = StepInfo {
        t: state.t,
        alpha,
        grad: g.to_vec(),
        x_prev,
    };
    state.t += 1;
    info
}

/// `v <- mu v + g`, `x <- x - alpha (g + mu v)`.
pub fn nag_step(state: &mut OptimizerState, cfg: &OptimizerConfig, g: &[f64]) -> Result<StepInfo> {
    check_dim(state.dim(), g.len())?;
    let alpha = cfg.alpha_rule.step_size(&context(state, cfg, g));
    let x_prev = state.x.clone();
    for ((xi, vi), &gi) in state.x.iter_mut().zip(state.v.iter_mut()).zip(g) {
        *vi = cfg.mu * *vi + gi;
        *xi -= alpha * (gi + cfg.mu * *vi);
    }
    Ok(finish(state, x_prev, alpha, g))
}

/// `v <- beta2 v + (1 - beta2)(g^2 + xi)`, `x <- x - alpha V^{-1/2} g`.
pub fn rmsprop_step(state: &mut OptimizerState, cfg: &OptimizerConfig, g: &[f64]) -> Result<StepInfo> {
    check_dim(state.dim(), g.len())?;
    for (vi, &gi) in state.v.iter_mut().zip(g) {
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * (gi * gi + cfg.xi);
    }
    let alpha = cfg.alpha_rule.step_size(&context(state, cfg, g));
    let dir = penrose_sqrt_inv_apply(&state.v, g)?;
    let x_prev = state.x.clone();
    for (xi, di) in state.x.iter_mut().zip(&dir) {
        *xi -= alpha * di;
    }
    Ok(finish(state, x_prev, alpha, g))
}

/// `m <- beta1 m + (1 - beta1) g`, `v <- beta2 v + (1 - beta2) g^2`,
/// `x <- x - alpha_t (V^{1/2} + xi I)^{-1} m`.
pub fn adam_step(state: &mut OptimizerState, cfg: &OptimizerConfig, g: &[f64]) -> Result<StepInfo> {
    check_dim(state.dim(), g.len())?;
    for ((mi, vi), &gi) in state.m.iter_mut().zip(state.v.iter_mut()).zip(g) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * (gi * gi);
    }
    let alpha = cfg.alpha_rule.step_size(&context(state, cfg, g));
    let x_prev = state.x.clone();
    for ((xi, mi), vi) in state.x.iter_mut().zip(&state.m).zip(&state.v) {
        *xi -= alpha * (mi / (vi.sqrt() + cfg.xi));
    }
    Ok(finish(state, x_prev, alpha, g))
}

/// Dispatches on `cfg.method`.
pub fn step(state: &mut OptimizerState, cfg: &OptimizerConfig, g: &[f64]) -> Result<StepInfo> {
    match cfg.method {
        Method::Nag => nag_step(state, cfg, g),
        Method::Rmsprop => rmsprop_step(state, cfg, g),
        Method::Adam => adam_step(state, cfg, g),
    }
}

/// Source of the gradient each step consumes.
pub trait GradientOracle {
    fn gradient(&mut self, x: &[f64], t: u64) -> Result<Vec<f64>>;

    /// True when [`GradientOracle::gradient`] returns the full gradient of
    /// the run's objective, letting the driver reuse the one it already
    /// computed for the stopping test.
    fn is_full(&self) -> bool {
        false
    }
}

impl<O: GradientOracle + ?Sized> GradientOracle for &mut O {
    fn gradient(&mut self, x: &[f64], t: u64) -> Result<Vec<f64>> {
        (**self).gradient(x, t)
    }
    fn is_full(&self) -> bool {
        (**self).is_full()
    }
}

/// Deterministic oracle: the exact gradient of an objective.
pub struct FullGradient<'a>(pub &'a ObjectiveHandle);

impl GradientOracle for FullGradient<'_> {
    fn gradient(&mut self, x: &[f64], _t: u64) -> Result<Vec<f64>> {
        self.0.grad(x)
    }
    fn is_full(&self) -> bool {
        true
    }
}

/// One uniformly sampled component gradient per step.
pub struct StochasticGradient<'a, R> {
    pub fsum: &'a FiniteSumObjective,
    pub rng: R,
}

impl<R: Rng> GradientOracle for StochasticGradient<'_, R> {
    fn gradient(&mut self, x: &[f64], _t: u64) -> Result<Vec<f64>> {
        self.fsum.sample_gradient(x, &mut self.rng)
    }
}

/// Plays back a recorded gradient stream, one entry per step.
pub struct ReplayGradient {
    stream: Vec<Vec<f64>>,
    next: usize,
}

impl ReplayGradient {
    pub fn new(stream: Vec<Vec<f64>>) -> Self {
        ReplayGradient { stream, next: 0 }
    }
}

impl GradientOracle for ReplayGradient {
    fn gradient(&mut self, _x: &[f64], _t: u64) -> Result<Vec<f64>> {
        let g = self
            .stream
            .get(self.next)
            .cloned()
            .ok_or(Error::Empty("replayed gradient stream"))?;
        self.next += 1;
        Ok(g)
    }
}

/// One logged iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub f: f64,
    pub grad_norm: f64,
    /// Step size used to leave `x_t`; absent on the last row.
    pub alpha: Option<f64>,
    pub lambda_min: Option<f64>,
    pub f_test: Option<f64>,
    /// `min_{s <= t}` of the logged gradient norms.
    #[serde(skip)]
    pub min_grad_norm: f64,
}

impl TraceRecord {
    pub fn new(t: u64, f: f64, grad_norm: f64) -> Self {
        TraceRecord {
            t,
            f,
            grad_norm,
            alpha: None,
            lambda_min: None,
            f_test: None,
            min_grad_norm: grad_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `|grad f(x_t)| <= eps` at some logged iterate.
    Critical,
    /// The step cap was exhausted.
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRecord>,
    /// Iterate index of the first row passing the criticality test.
    pub hit: Option<u64>,
    pub stop: Option<StopReason>,
}

impl Trace {
    pub fn push(&mut self, mut row: TraceRecord) {
        let prev = self.rows.last().map_or(f64::INFINITY, |r| r.min_grad_norm);
        row.min_grad_norm = prev.min(row.grad_norm);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest logged gradient norm among iterates `t <= max_t`.
    pub fn min_grad_norm_upto(&self, max_t: u64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.t <= max_t)
            .map(|r| r.grad_norm)
            .reduce(f64::min)
    }

    /// First logged iterate `t <= max_t` with gradient norm at most `eps`.
    pub fn hitting_time(&self, eps: f64, max_t: u64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.t <= max_t && r.grad_norm <= eps)
            .map(|r| r.t)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.rows.last()
    }
}

/// When to stop and how often to log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Maximum number of steps `T`; iterates `x_1 .. x_{T+1}` may be logged.
    pub max_steps: u64,
    /// Stop at the first logged iterate with `|grad f| <= eps`.
    pub eps: f64,
    /// Log (and test) every `eval_every`-th iterate plus the final one.
    pub eval_every: u64,
}

impl StopRule {
    pub fn new(max_steps: u64, eps: f64) -> Self {
        StopRule {
            max_steps,
            eps,
            eval_every: 1,
        }
    }

    pub fn with_eval_every(mut self, k: u64) -> Self {
        self.eval_every = k.max(1);
        self
    }
}

/// Hooks called by [`run_with`]. Both default to no-ops.
pub trait Observer {
    /// Called on each logged row before it is stored; may fill optional
    /// columns such as `lambda_min`.
    fn observe(&mut self, _x: &[f64], _row: &mut TraceRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every step with the updated state.
    fn after_step(&mut self, _state: &OptimizerState, _info: &StepInfo) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn observe(&mut self, x: &[f64], row: &mut TraceRecord) -> Result<()> {
        (**self).observe(x, row)
    }
    fn after_step(&mut self, state: &OptimizerState, info: &StepInfo) -> Result<()> {
        (**self).after_step(state, info)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn observe(&mut self, x: &[f64], row: &mut TraceRecord) -> Result<()> {
        self.0.observe(x, row)?;
        self.1.observe(x, row)
    }
    fn after_step(&mut self, state: &OptimizerState, info: &StepInfo) -> Result<()> {
        self.0.after_step(state, info)?;
        self.1.after_step(state, info)
    }
}

/// Iterates `cfg` on `obj` without observers. See [`run_with`].
pub fn run<G: GradientOracle>(
    state: OptimizerState,
    cfg: &OptimizerConfig,
    obj: &ObjectiveHandle,
    oracle: G,
    stop: &StopRule,
) -> Result<(OptimizerState, Trace)> {
    run_with(state, cfg, obj, oracle, stop, ())
}

/// Iterates until `stop.max_steps` steps have been taken or a logged iterate
/// is `eps`-critical. The stopping test always uses the full gradient of
/// `obj`, whatever `oracle` feeds the steps.
///
/// A non-finite value or gradient aborts with [`Error::Diverged`] carrying the
/// trace so far.
pub fn run_with<G: GradientOracle, O: Observer>(
    mut state: OptimizerState,
    cfg: &OptimizerConfig,
    obj: &ObjectiveHandle,
    mut oracle: G,
    stop: &StopRule,
    mut observer: O,
) -> Result<(OptimizerState, Trace)> {
    cfg.validate()?;
    check_dim(obj.dim(), state.dim())?;
    let mut trace = Trace::default();
    let start = state.t;
    let last = start + stop.max_steps;
    let every = stop.eval_every.max(1);
    loop {
        let t = state.t;
        let logged = (t - start) % every == 0 || t == last;
        let mut full_grad = None;
        if logged {
            let (f, g) = obj.value_and_grad(&state.x)?;
            let gn = norm(&g);
            let mut row = TraceRecord::new(t, f, gn);
            if !f.is_finite() || !gn.is_finite() {
                let what = if f.is_finite() { "gradient" } else { "objective value" };
                trace.push(row);
                return Err(Error::Diverged {
                    t,
                    what,
                    trace: Box::new(trace),
                });
            }
            observer.observe(&state.x, &mut row)?;
            if gn <= stop.eps {
                trace.push(row);
                trace.hit = Some(t);
                trace.stop = Some(StopReason::Critical);
                return Ok((state, trace));
            }
            if t == last {
                trace.push(row);
                trace.stop = Some(StopReason::MaxSteps);
                return Ok((state, trace));
            }
            trace.push(row);
            full_grad = Some(g);
        }
        let g = match full_grad {
            Some(g) if oracle.is_full() => g,
            _ => oracle.gradient(&state.x, t)?,
        };
        let info = step(&mut state, cfg, &g)?;
        if logged {
            if let Some(row) = trace.rows.last_mut() {
                row.alpha = Some(info.alpha);
            }
        }
        if state.x.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                t: state.t,
                what: "iterate",
                trace: Box::new(trace),
            });
        }
        observer.after_step(&state, &info)?;
    }
}

/// Audits every RMSProp preconditioner entry `1/sqrt(v_i)` against
/// `[1/sqrt(sigma_f^2 + xi), 1/sqrt((1 - beta2) xi)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionerAudit {
    pub lower: f64,
    pub upper: f64,
    pub entries_checked: u64,
    pub violations: u64,
    /// First offending `(t, coordinate, entry)`.
    pub first_violation: Option<(u64, usize, f64)>,
    /// Relative tolerance applied to both ends.
    pub rel_tol: f64,
}

impl PreconditionerAudit {
    pub fn new(sigma_f: f64, beta2: f64, xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::invalid("xi", "preconditioner bounds need xi > 0"));
        }
        Ok(PreconditionerAudit {
            lower: 1.0 / (sigma_f * sigma_f + xi).sqrt(),
            upper: 1.0 / ((1.0 - beta2) * xi).sqrt(),
            entries_checked: 0,
            violations: 0,
            first_violation: None,
            rel_tol: 1e-12,
        })
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn check(&mut self, t: u64, v: &[f64]) {
        for (i, &vi) in v.iter().enumerate() {
            let entry = if vi > 0.0 { 1.0 / vi.sqrt() } else { f64::INFINITY };
            self.entries_checked += 1;
            let ok = entry >= self.lower * (1.0 - self.rel_tol) && entry <= self.upper * (1.0 + self.rel_tol);
            if !ok {
                self.violations += 1;
                self.first_violation.get_or_insert((t, i, entry));
            }
        }
    }
}

impl Observer for PreconditionerAudit {
    fn after_step(&mut self, state: &OptimizerState, info: &StepInfo) -> Result<()> {
        self.check(info.t, &state.v);
        Ok(())
    }
}

/// Records the gradient fed to each step, for replay.
#[derive(Debug, Clone, Default)]
pub struct GradientRecorder {
    pub grads: Vec<Vec<f64>>,
    pub iterates: Vec<Vec<f64>>,
}

impl Observer for GradientRecorder {
    fn after_step(&mut self, state: &OptimizerState, info: &StepInfo) -> Result<()> {
        self.grads.push(info.grad.clone());
        self.iterates.push(state.x.clone());
        Ok(())
    }
}

/// Result of checking `f(x_{t+1}) - f(x_t) <= -delta^2 alpha_t |grad f(x_t)|^2`
/// along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseAudit {
    pub steps_checked: u64,
    pub violations: u64,
    /// Smallest `rhs - lhs`, normalized by `1 + |f(x_t)|`.
    pub worst_slack: f64,
    pub first_violation: Option<u64>,
}

impl DecreaseAudit {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Checks the sufficient-decrease inequality between consecutive trace rows,
/// which must be logged at every step. Violations are slack below
/// `-tol (1 + |f(x_t)|)`.
pub fn decrease_audit(trace: &Trace, delta_sq: f64, tol: f64) -> DecreaseAudit {
    let mut audit = DecreaseAudit {
        steps_checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
        first_violation: None,
    };
    for w in trace.rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let Some(alpha) = a.alpha else { continue };
        if b.t != a.t + 1 {
            continue;
        }
        let bound = -delta_sq * alpha * a.grad_norm * a.grad_norm;
        let slack = (bound - (b.f - a.f)) / (1.0 + a.f.abs());
        audit.steps_checked += 1;
        audit.worst_slack = audit.worst_slack.min(slack);
        if slack < -tol {
            audit.violations += 1;
            audit.first_violation.get_or_insert(a.t);
        }
    }
    audit
}

/// `|x_{t+1} - x_t|` for a step.
pub fn displacement(state: &OptimizerState, info: &StepInfo) -> f64 {
    let d: Vec<f64> = state.x.iter().zip(&info.x_prev).map(|(a, b)| a - b).collect();
    dot(&d, &d).sqrt()
}
