//! Central finite-difference check of analytic gradients.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::GradcheckConfig;
use crate::error::{Error, Result};
use crate::inference::{DataLoss, DrapeModel, Observations};
use crate::material::{Material, MaterialField};
use crate::render::SilhouetteImage;

/// Times the step is divided by ten while the difference is unconverged.
const MAX_REFINEMENTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub index: usize,
    pub value: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    /// Step of the central difference.
    pub step: f64,
    /// The difference did not converge as the step shrank; excluded from
    /// the pass rate.
    pub kink: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub loss: f64,
    pub components: Vec<ComponentCheck>,
    /// Components compared (kinks excluded).
    pub checked: usize,
    pub passed: usize,
    pub kinks: usize,
    pub pass_fraction: f64,
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// Component `i` is perturbed by `perturbation * |x_i|` (or
/// `perturbation` when `x_i == 0`) and passes when the difference is within
/// `rel_tol` of the larger magnitude or within `abs_tol`. A difference is
/// accepted once the one at a tenth of the step agrees with it to
/// `rel_tol / 10`; otherwise the step straddles a kink of `f` and is divided
/// by ten, up to three times, before the component is reported as a kink.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if x.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("no parameters to check".into()));
    }
    let f0 = f(x)?;
    let components = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut h = if x[i] == 0.0 { cfg.perturbation } else { cfg.perturbation * x[i].abs() };
            let mut xp = x.to_vec();
            let mut central = |h: f64| -> Result<f64> {
                xp[i] = x[i] + h;
                let fp = f(&xp)?;
                xp[i] = x[i] - h;
                let fm = f(&xp)?;
                Ok((fp - fm) / (2.0 * h))
            };
            let mut numeric = central(h)?;
            let mut kink = true;
            for _ in 0..MAX_REFINEMENTS {
                let finer = central(h / 10.0)?;
                let gap = (finer - numeric).abs();
                if gap <= 0.1 * cfg.rel_tol * finer.abs().max(numeric.abs()) || gap <= cfg.abs_tol {
                    kink = false;
                    break;
                }
                h /= 10.0;
                numeric = finer;
            }
            let a = analytic[i];
            let abs_err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
            let pass = abs_err <= cfg.abs_tol || rel_err <= cfg.rel_tol;
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("finite difference of component {i}")));
            }
            Ok(ComponentCheck {
                index: i,
                value: x[i],
                analytic: a,
                numeric,
                abs_err,
                rel_err,
                step: h,
                kink,
                pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kinks = components.iter().filter(|c| c.kink).count();
    let checked = components.len() - kinks;
    let passed = components.iter().filter(|c| !c.kink && c.pass).count();
    let pass_fraction = if checked == 0 { 0.0 } else { passed as f64 / checked as f64 };
    Ok(GradcheckReport {
        loss: f0,
        components,
        checked,
        passed,
        kinks,
        pass_fraction,
    })
}

/// Checks the homogeneous-material gradient of the image MSE through
/// simulation and soft rendering.
pub fn pipeline_gradcheck(
    model: &DrapeModel,
    material: &Material,
    target: &SilhouetteImage,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let data = Observations::silhouettes(vec![target.clone()]);
    let field = MaterialField::Homogeneous(material.clone());
    let eval = model.data_term(&field, &data, DataLoss::Mse)?;
    let loss = |v: &[f64]| -> Result<f64> {
        let m = MaterialField::Homogeneous(Material::from_slice(v)?);
        let state = model.drape(&m)?;
        crate::metrics::image_mse(&model.soft_silhouette(&state.x)?, target)
    };
    finite_difference_check(loss, &material.to_vec(), &eval.grad, cfg)
}
