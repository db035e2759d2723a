//! Turns an [`ObjectiveSpec`] into objective handles and a starting point.

use std::sync::Arc;

use adacrit_core::autoenc::{
    autoencoder_objective, estimate_meta, glorot_init, glorot_probes, read_idx_images, synthetic_dataset,
    synthetic_images,
    AutoencoderShape, Batch,
};
use adacrit_core::objective::benchmarks::{logistic_sum, logistic_sum_random, pseudo_huber, quadratic, scaled_finite_sum};
use adacrit_core::rng::{seeded, stream};
use adacrit_core::{FiniteSumObjective, ObjectiveHandle, ObjectiveMeta};
use rand::Rng as _;

use crate::config::{DataSpec, ObjectiveSpec, StartSpec};
use crate::error::HarnessError;

/// Autoencoder data and shape, kept for mini-batching and test loss.
#[derive(Debug, Clone)]
pub struct AutoencoderProblem {
    pub shape: AutoencoderShape,
    pub train: Arc<Batch>,
    pub test: Option<Arc<Batch>>,
}

/// A built objective. `fsum` is present for finite sums, whose mean is `obj`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub obj: ObjectiveHandle,
    pub fsum: Option<FiniteSumObjective>,
    pub autoenc: Option<AutoencoderProblem>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.obj.dim()
    }

    pub fn meta(&self) -> &ObjectiveMeta {
        self.obj.meta()
    }

    /// Largest component gradient bound, or `sigma` for a single function.
    pub fn sigma_f(&self) -> f64 {
        self.fsum.as_ref().map_or(self.meta().sigma, |s| s.sigma_f())
    }

    /// Test-set loss at `x`, when the objective has a test set.
    pub fn test_loss(&self, x: &[f64]) -> Option<Result<f64, adacrit_core::Error>> {
        let ae = self.autoenc.as_ref()?;
        let test = ae.test.as_ref()?;
        Some(adacrit_core::autoenc::batch_loss_flat(&ae.shape, x, test))
    }

    pub fn start(&self, spec: &StartSpec) -> Result<Vec<f64>, HarnessError> {
        let d = self.dim();
        let x = match spec {
            StartSpec::Fixed { values } => {
                if values.len() != d {
                    return Err(HarnessError::Config(format!(
                        "start.values has length {}, objective dimension is {d}",
                        values.len()
                    )));
                }
                values.clone()
            }
            StartSpec::Uniform { radius, seed } => {
                if !(*radius > 0.0) {
                    return Err(HarnessError::Config("start.radius must be positive".into()));
                }
                uniform(*seed, d, *radius)
            }
            StartSpec::Default { seed } => match &self.autoenc {
                Some(ae) => {
                    let s = ae.shape;
                    glorot_init(&mut seeded(*seed, &[stream::INIT]), s.ell, s.d, s.h)?.into_flat()
                }
                None => uniform(*seed, d, 1.0),
            },
        };
        Ok(x)
    }
}

fn uniform(seed: u64, d: usize, radius: f64) -> Vec<f64> {
    let mut rng = seeded(seed, &[stream::START]);
    (0..d).map(|_| rng.random_range(-radius..=radius)).collect()
}

pub fn build(spec: &ObjectiveSpec) -> Result<Problem, HarnessError> {
    let single = |obj: ObjectiveHandle| Problem {
        obj,
        fsum: None,
        autoenc: None,
    };
    Ok(match spec {
        ObjectiveSpec::Quadratic { matrix, diag, box_radius } => {
            let a = match (matrix, diag) {
                (Some(m), None) => m.clone(),
                (None, Some(d)) => (0..d.len())
                    .map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                    .collect(),
                _ => return Err(HarnessError::Config("quadratic needs exactly one of `matrix` or `diag`".into())),
            };
            single(quadratic(a, *box_radius)?)
        }
        ObjectiveSpec::LogisticSum {
            dim,
            pairs,
            scale,
            data_seed,
            directions,
        } => match directions {
            Some(dirs) => single(logistic_sum(dirs.clone())?),
            None => single(logistic_sum_random(&mut seeded(*data_seed, &[stream::DATA]), *dim, *pairs, *scale)?),
        },
        ObjectiveSpec::PseudoHuber { dim, delta } => single(pseudo_huber(*dim, *delta)?),
        ObjectiveSpec::ScaledSum { base, scales, k } => {
            let base = build(base)?;
            if base.fsum.is_some() || base.autoenc.is_some() {
                return Err(HarnessError::Config("scaled_sum.base must be a single benchmark function".into()));
            }
            let scales = match (scales, k) {
                (Some(s), None) => s.clone(),
                (None, Some(k)) if *k >= 1 => spread_scales(*k),
                _ => return Err(HarnessError::Config("scaled_sum needs exactly one of `scales` or a positive `k`".into())),
            };
            let fsum = scaled_finite_sum(&base.obj, &scales)?;
            let cbar = scales.iter().sum::<f64>() / scales.len() as f64;
            // the mean is cbar * base, so its constants scale exactly
            let mut meta = base.meta().clone();
            meta.lipschitz *= cbar;
            meta.sigma *= cbar;
            meta.f_star *= cbar;
            meta.lower_bound = meta.lower_bound.map(|b| b * cbar);
            meta.upper_bound = meta.upper_bound.map(|b| b * cbar);
            let fsum = fsum.with_mean_meta(meta);
            Problem {
                obj: fsum.mean().clone(),
                fsum: Some(fsum),
                autoenc: None,
            }
        }
        ObjectiveSpec::ShiftedQuadratics { centers, box_radius } => {
            let fsum = shifted_quadratics(centers, *box_radius)?;
            Problem {
                obj: fsum.mean().clone(),
                fsum: Some(fsum),
                autoenc: None,
            }
        }
        ObjectiveSpec::Autoencoder {
            ell,
            h,
            data,
            probes,
            power_iters,
            probe_rows,
        } => {
            let (train, test) = load_data(data)?;
            let shape = AutoencoderShape::new(*ell, train.d(), *h)?;
            let probe_batch = train.head((*probe_rows).clamp(1, train.n()))?;
            let pts = glorot_probes(shape, 0, (*probes).max(1))?;
            let meta = estimate_meta(shape, &probe_batch, &pts, *power_iters, &mut seeded(0, &[stream::PROBE]))?;
            let train = Arc::new(train);
            let obj = autoencoder_objective(shape, train.clone(), meta)?;
            Problem {
                obj,
                fsum: None,
                autoenc: Some(AutoencoderProblem {
                    shape,
                    train,
                    test: test.map(Arc::new),
                }),
            }
        }
    })
}

/// `k` scalings evenly spread over `[0.5, 1.5]`.
pub fn spread_scales(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    (0..k).map(|p| 0.5 + p as f64 / (k - 1) as f64).collect()
}

/// Components `|x - c_p|^2 / 2`. Each has `L = 1`; on the box
/// `|x|_inf <= r` its gradient norm is at most `|(r + |c_p|_inf) 1|`.
fn shifted_quadratics(centers: &[Vec<f64>], box_radius: f64) -> Result<FiniteSumObjective, HarnessError> {
    let d = centers.first().map(Vec::len).unwrap_or(0);
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(HarnessError::Config("shifted_quadratics.centers must be non-empty and share a dimension".into()));
    }
    if !(box_radius > 0.0) {
        return Err(HarnessError::Config("shifted_quadratics.box_radius must be positive".into()));
    }
    let comps = centers
        .iter()
        .enumerate()
        .map(|(p, c)| {
            let cmax = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let mut meta = ObjectiveMeta::new(1.0, (d as f64).sqrt() * (box_radius + cmax), 0.0)
                .with_minimizer(c.clone())
                .with_bounds(Some(0.0), None);
            meta.sigma_box = Some(box_radius);
            let (c1, c2) = (c.clone(), c.clone());
            ObjectiveHandle::new(
                format!("shifted_quadratic{p}"),
                d,
                meta,
                move |x| 0.5 * x.iter().zip(&c1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                move |x| x.iter().zip(&c2).map(|(a, b)| a - b).collect(),
            )
            .with_hvp(|_, v| v.to_vec())
        })
        .collect();
    let fsum = FiniteSumObjective::new(comps)?;
    // the mean is |x - cbar|^2 / 2 + spread
    let k = centers.len() as f64;
    let cbar: Vec<f64> = (0..d).map(|i| centers.iter().map(|c| c[i]).sum::<f64>() / k).collect();
    let spread = centers
        .iter()
        .map(|c| 0.5 * c.iter().zip(&cbar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / k;
    let cmax = cbar.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut meta = ObjectiveMeta::new(1.0, (d as f64).sqrt() * (box_radius + cmax), spread)
        .with_minimizer(cbar)
        .with_bounds(Some(spread), Some(spread));
    meta.sigma_box = Some(box_radius);
    Ok(fsum.with_mean_meta(meta))
}

fn load_data(spec: &DataSpec) -> Result<(Batch, Option<Batch>), HarnessError> {
    match spec {
        DataSpec::Synthetic {
            side,
            n_train,
            n_test,
            data_seed,
        } => {
            let mut rng = seeded(*data_seed, &[stream::DATA]);
            if *n_test == 0 {
                return Ok((synthetic_images(&mut rng, *side, *n_train)?, None));
            }
            let ds = synthetic_dataset(&mut rng, *side, *n_train, *n_test)?;
            Ok((ds.train, Some(ds.test)))
        }
        DataSpec::Idx {
            train_path,
            test_path,
            crop,
            limit,
        } => {
            let read = |p: &std::path::Path| -> Result<Batch, HarnessError> {
                let b = read_idx_images(p, *crop).map_err(|e| match e {
                    adacrit_core::Error::Io(io) => HarnessError::io(p, io),
                    other => HarnessError::Config(format!("{}: {other}", p.display())),
                })?;
                Ok(match limit {
                    Some(k) => b.head((*k).min(b.n()))?,
                    None => b,
                })
            };
            let train = read(train_path)?;
            let test = test_path.as_deref().map(read).transpose()?;
            Ok((train, test))
        }
    }
}
