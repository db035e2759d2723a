//! Step-size rules and convergence budgets.
//!
//! Each budget function turns objective metadata (`L`, `sigma`, `f(x*)`) and
//! the target criticality `eps` into a [`TheoremBudget`]: the step rule to
//! run with, the iteration cap `T` after which an `eps`-critical iterate is
//! guaranteed, and every intermediate constant so a certificate can be
//! audited offline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::objective::ObjectiveMeta;

/// Inputs a step rule may depend on at step `t`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub t: u64,
    pub grad: &'a [f64],
    /// First moment after this step's update (zeros for non-ADAM methods).
    pub m: &'a [f64],
    /// Second-moment accumulator after this step's update.
    pub v: &'a [f64],
    pub xi: f64,
}

/// How `alpha_t` is chosen at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Constant {
        alpha: f64,
    },
    /// `alpha0 / sqrt(t)`.
    InverseSqrt {
        alpha0: f64,
    },
    /// `alpha * sqrt(1 - beta2^t) / (1 - beta1^t)`.
    BiasCorrected {
        alpha: f64,
        beta1: f64,
        beta2: f64,
    },
    /// `|g_t|^2 / (L (1 - beta1^t)^2) * 4 eps / (3 (eps + 2 sigma)^2)`.
    AdamTheorem {
        lipschitz: f64,
        epsilon: f64,
        sigma: f64,
        beta1: f64,
    },
    /// The step minimizing the smoothness upper bound along the ADAM
    /// direction; see [`adam_quadratic_step`]. Diagnostic only.
    AdamQuadraticOptimal {
        lipschitz: f64,
    },
}

impl StepRule {
    pub fn step_size(&self, ctx: &StepContext<'_>) -> f64 {
        match *self {
            StepRule::Constant { alpha } => alpha,
            StepRule::InverseSqrt { alpha0 } => alpha0 / (ctx.t as f64).sqrt(),
            StepRule::BiasCorrected { alpha, beta1, beta2 } => {
                adam_bias_corrected_alpha(alpha, beta1, beta2, ctx.t)
            }
            StepRule::AdamTheorem {
                lipschitz,
                epsilon,
                sigma,
                beta1,
            } => {
                let g2 = dot(ctx.grad, ctx.grad);
                let corr = 1.0 - beta1.powi(ctx.t as i32);
                g2 / (lipschitz * corr * corr) * 4.0 * epsilon / (3.0 * (epsilon + 2.0 * sigma).powi(2))
            }
            StepRule::AdamQuadraticOptimal { lipschitz } => {
                adam_quadratic_step(ctx.grad, ctx.m, ctx.v, ctx.xi, lipschitz)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{x} must be positive and finite")))
            }
        };
        let unit = |name: &'static str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{x} must lie in [0, 1)")))
            }
        };
        match *self {
            StepRule::Constant { alpha } => positive("alpha", alpha),
            StepRule::InverseSqrt { alpha0 } => positive("alpha0", alpha0),
            StepRule::BiasCorrected { alpha, beta1, beta2 } => {
                positive("alpha", alpha)?;
                unit("beta1", beta1)?;
                unit("beta2", beta2)
            }
            StepRule::AdamTheorem {
                lipschitz,
                epsilon,
                sigma,
                beta1,
            } => {
                positive("lipschitz", lipschitz)?;
                positive("epsilon", epsilon)?;
                positive("sigma", sigma)?;
                unit("beta1", beta1)
            }
            StepRule::AdamQuadraticOptimal { lipschitz } => positive("lipschitz", lipschitz),
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepRule::Constant { alpha } => write!(f, "constant({alpha})"),
            StepRule::InverseSqrt { alpha0 } => write!(f, "{alpha0}/sqrt(t)"),
            StepRule::BiasCorrected { alpha, .. } => write!(f, "bias-corrected({alpha})"),
            StepRule::AdamTheorem { .. } => write!(f, "adam-theorem"),
            StepRule::AdamQuadraticOptimal { .. } => write!(f, "adam-quadratic-optimal"),
        }
    }
}

/// Conventional ADAM step `alpha * sqrt(1 - beta2^t) / (1 - beta1^t)`.
///
/// # Panics
/// If `t == 0`.
pub fn adam_bias_corrected_alpha(alpha: f64, beta1: f64, beta2: f64, t: u64) -> f64 {
    assert!(t >= 1, "step index starts at 1");
    let t = t.min(i32::MAX as u64) as i32;
    alpha * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t))
}

/// `alpha0 / sqrt(t)`, the schedule of the shift-free RMSProp variant.
pub fn rmsprop_noshift_alpha(t: u64, alpha0: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("t", "step index starts at 1"));
    }
    Ok(alpha0 / (t as f64).sqrt())
}

/// Minimizer of `eta -> -eta <g, P m> + L eta^2 / 2 |P m|^2` with
/// `P = (V^{1/2} + xi I)^{-1}`, i.e. `<g, P m> / (L |P m|^2)`. Zero when the
/// direction vanishes.
pub fn adam_quadratic_step(g: &[f64], m: &[f64], v: &[f64], xi: f64, lipschitz: f64) -> f64 {
    let pm: Vec<f64> = m.iter().zip(v).map(|(mi, vi)| mi / (vi.sqrt() + xi)).collect();
    let den = dot(&pm, &pm);
    if den == 0.0 {
        0.0
    } else {
        dot(g, &pm) / (lipschitz * den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremId {
    /// Deterministic RMSProp with shift `xi > 0`.
    RmsDet,
    /// Stochastic RMSProp on a sign-consistent finite sum.
    RmsStoch,
    /// Deterministic RMSProp with `xi = 0` and `alpha0 / sqrt(t)` steps.
    RmsNoshift,
    /// Deterministic ADAM with small `beta1`.
    AdamDet,
}

impl TheoremId {
    pub fn is_stochastic(self) -> bool {
        matches!(self, TheoremId::RmsStoch)
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TheoremId::RmsDet => "rms_det",
            TheoremId::RmsStoch => "rms_stoch",
            TheoremId::RmsNoshift => "rms_noshift",
            TheoremId::AdamDet => "adam_det",
        };
        f.write_str(s)
    }
}

/// A step rule plus the iteration cap that guarantees `eps`-criticality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremBudget {
    pub theorem: TheoremId,
    pub epsilon: f64,
    pub alpha_rule: StepRule,
    /// `None` when the guarantee exists but carries no explicit constant.
    pub max_steps: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub xi: f64,
    /// Set when `f(x_1) = f(x*)`, i.e. the start is already a minimizer.
    pub already_critical: bool,
    /// Intermediate constants, including the real-valued bound `t_bound`
    /// before rounding up.
    pub derived: BTreeMap<String, f64>,
}

impl TheoremBudget {
    pub fn derived(&self, key: &str) -> Option<f64> {
        self.derived.get(key).copied()
    }
}

/// Rounds a real-valued iteration bound up to an integer, treating values
/// within a few ulps of an integer as that integer so that e.g. `4000.000000000001`
/// (from `1 - 0.9` not being exactly `0.1`) stays `4000`.
pub fn ceil_steps(bound: f64) -> u64 {
    let nearest = bound.round();
    let c = if (bound - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        bound.ceil()
    };
    (c.max(1.0)).min(u64::MAX as f64) as u64
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("eps", format!("{eps} must be positive and finite")))
    }
}

fn check_beta2(beta2: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta2) {
        Ok(())
    } else {
        Err(Error::invalid("beta2", format!("{beta2} must lie in [0, 1)")))
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("xi", format!("{xi} must be positive")))
    }
}

/// `f(x_1) - f(x*)`, rejecting starts below the claimed minimum.
fn optimality_gap(meta: &ObjectiveMeta, f_x: f64) -> Result<f64> {
    if !meta.f_star.is_finite() {
        return Err(Error::Metadata("f_star must be finite to compute a budget".into()));
    }
    if f_x.is_nan() {
        return Err(Error::Metadata("f(x_1) is NaN".into()));
    }
    let gap = f_x - meta.f_star;
    // allow round-off when starting exactly at the minimizer
    if gap < -1e-12 * (1.0 + meta.f_star.abs()) {
        return Err(Error::Metadata(format!(
            "f(x_1) = {f_x} lies below f_star = {}",
            meta.f_star
        )));
    }
    Ok(gap.max(0.0))
}

/// Deterministic RMSProp: constant
/// `alpha = (1 - beta2) xi / (L sqrt(sigma^2 + xi))` and
/// `T = 2 L (sigma^2 + xi) (f(x_1) - f*) / ((1 - beta2) xi eps^2)`.
pub fn rmsprop_det_budget(meta: &ObjectiveMeta, f_x1: f64, beta2: f64, xi: f64, eps: f64) -> Result<TheoremBudget> {
    meta.validate()?;
    check_eps(eps)?;
    check_beta2(beta2)?;
    check_xi(xi)?;
    let gap = optimality_gap(meta, f_x1)?;
    let (l, s2) = (meta.lipschitz, meta.sigma * meta.sigma);
    let alpha = (1.0 - beta2) * xi / (l * (s2 + xi).sqrt());
    let t_bound = 2.0 * l * (s2 + xi) * gap / ((1.0 - beta2) * xi) / (eps * eps);
    let mut derived = BTreeMap::new();
    derived.insert("alpha".into(), alpha);
    derived.insert("delta_sq".into(), 1.0 / (2.0 * (s2 + xi).sqrt()));
    derived.insert("mu_min".into(), 1.0 / (s2 + xi).sqrt());
    derived.insert("mu_max".into(), 1.0 / ((1.0 - beta2) * xi).sqrt());
    derived.insert("gap".into(), gap);
    derived.insert("lipschitz".into(), l);
    derived.insert("sigma".into(), meta.sigma);
    derived.insert("t_bound".into(), t_bound);
    Ok(TheoremBudget {
        theorem: TheoremId::RmsDet,
        epsilon: eps,
        alpha_rule: StepRule::Constant { alpha },
        max_steps: Some(ceil_steps(t_bound)),
        beta1: 0.0,
        beta2,
        xi,
        already_critical: gap == 0.0,
        derived,
    })
}

/// Stochastic RMSProp with gradient bound `sigma_f` on every component:
/// `T = 2 L sigma_f^2 (sigma_f^2 + xi) (f(x_1) - f*) / ((1 - beta2) xi eps^4)`
/// and `alpha = sqrt(2 xi (1 - beta2) (f(x_1) - f*) / (sigma_f^2 L)) / sqrt(T)`.
/// The guarantee is `min_t E|grad f(x_t)|^2 <= eps^2`.
pub fn rmsprop_stoch_budget(
    meta: &ObjectiveMeta,
    sigma_f: f64,
    f_x1: f64,
    beta2: f64,
    xi: f64,
    eps: f64,
) -> Result<TheoremBudget> {
    meta.validate()?;
    check_eps(eps)?;
    check_beta2(beta2)?;
    check_xi(xi)?;
    if !(sigma_f > 0.0 && sigma_f.is_finite()) {
        return Err(Error::invalid("sigma_f", "must be positive"));
    }
    let gap = optimality_gap(meta, f_x1)?;
    let l = meta.lipschitz;
    let sf2 = sigma_f * sigma_f;
    let t_bound = 2.0 * l * sf2 * (sf2 + xi) * gap / ((1.0 - beta2) * xi) / eps.powi(4);
    let t = ceil_steps(t_bound);
    let alpha = (2.0 * xi * (1.0 - beta2) * gap / (sf2 * l)).sqrt() / (t as f64).sqrt();
    let mut derived = BTreeMap::new();
    derived.insert("alpha".into(), alpha);
    derived.insert("mu_min".into(), 1.0 / (sf2 + xi).sqrt());
    derived.insert("mu_max".into(), 1.0 / ((1.0 - beta2) * xi).sqrt());
    derived.insert("gap".into(), gap);
    derived.insert("lipschitz".into(), l);
    derived.insert("sigma_f".into(), sigma_f);
    derived.insert("t_bound".into(), t_bound);
    Ok(TheoremBudget {
        theorem: TheoremId::RmsStoch,
        epsilon: eps,
        // a zero gap would give alpha = 0; keep the rule valid and flag it
        alpha_rule: StepRule::Constant {
            alpha: if alpha > 0.0 { alpha } else { f64::MIN_POSITIVE },
        },
        max_steps: Some(t),
        beta1: 0.0,
        beta2,
        xi,
        already_critical: gap == 0.0,
        derived,
    })
}

/// Shift-free deterministic RMSProp: `alpha_t = alpha0 / sqrt(t)`, with an
/// `O(1/eps^4)` guarantee whose constant is not explicit, so `max_steps` is
/// `None` and runs report the observed hitting time.
pub fn rmsprop_noshift_budget(meta: &ObjectiveMeta, alpha0: f64, beta2: f64, eps: f64) -> Result<TheoremBudget> {
    meta.validate()?;
    check_eps(eps)?;
    check_beta2(beta2)?;
    if !(alpha0 > 0.0) {
        return Err(Error::invalid("alpha0", "must be positive"));
    }
    let mut derived = BTreeMap::new();
    derived.insert("alpha0".into(), alpha0);
    derived.insert("lipschitz".into(), meta.lipschitz);
    derived.insert("sigma".into(), meta.sigma);
    if let Some(lo) = meta.lower_bound {
        derived.insert("lower_bound".into(), lo);
    }
    if let Some(hi) = meta.upper_bound {
        derived.insert("upper_bound".into(), hi);
    }
    Ok(TheoremBudget {
        theorem: TheoremId::RmsNoshift,
        epsilon: eps,
        alpha_rule: StepRule::InverseSqrt { alpha0 },
        max_steps: None,
        beta1: 0.0,
        beta2,
        xi: 0.0,
        already_critical: false,
        derived,
    })
}

/// Deterministic ADAM instantiated with `beta1 = eps / (eps + 2 sigma)`,
/// `xi = 2 sigma`, the gradient-dependent [`StepRule::AdamTheorem`] and
/// `T = 9 L sigma^2 (f(x_2) - f*) / eps^6`. Note the gap is measured at the
/// second iterate. `beta2` is free in the guarantee; it is stored as given.
pub fn adam_theorem_params(meta: &ObjectiveMeta, f_x2: f64, beta2: f64, eps: f64) -> Result<TheoremBudget> {
    meta.validate()?;
    check_eps(eps)?;
    check_beta2(beta2)?;
    let gap = optimality_gap(meta, f_x2)?;
    let (l, sigma) = (meta.lipschitz, meta.sigma);
    let beta1 = eps / (eps + 2.0 * sigma);
    let xi = 2.0 * sigma;
    let theta1 = eps * (1.0 - beta1) / (beta1 * sigma) - 1.0;
    let theta2 = xi - sigma / theta1;
    let t_bound = 9.0 * l * sigma * sigma * gap / eps.powi(6);
    let mut derived = BTreeMap::new();
    derived.insert("theta1".into(), theta1);
    derived.insert("theta2".into(), theta2);
    derived.insert("beta1_max".into(), eps / (eps + sigma));
    derived.insert(
        "xi_min".into(),
        sigma * sigma * beta1 / (-beta1 * sigma + eps * (1.0 - beta1)),
    );
    derived.insert("gap".into(), gap);
    derived.insert("lipschitz".into(), l);
    derived.insert("sigma".into(), sigma);
    derived.insert("t_bound".into(), t_bound);
    Ok(TheoremBudget {
        theorem: TheoremId::AdamDet,
        epsilon: eps,
        alpha_rule: StepRule::AdamTheorem {
            lipschitz: l,
            epsilon: eps,
            sigma,
            beta1,
        },
        max_steps: Some(ceil_steps(t_bound)),
        beta1,
        beta2,
        xi,
        already_critical: gap == 0.0,
        derived,
    })
}
