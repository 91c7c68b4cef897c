//! Training loops for the homogeneous, heterogeneous and Bayesian models.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{
    floor_stretch_row, Material, MaterialField, MaterialKind, BEND_FLOOR, HOMOGENEOUS_PARAMS, STRETCH_COLS,
    STRETCH_PARAMS,
};
use crate::metrics::image_mse;
use crate::render::SilhouetteImage;

use super::loss::{elbo_loss, DataLoss, DrapeModel, Observations};
use super::posterior::{sample_material, standard_normal, LikelihoodSpec, PriorSpec, VariationalPosterior};

/// Which material model is fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// One set of tables for the whole cloth, fitted by image MSE.
    #[serde(rename = "HOMO")]
    Homo,
    /// One set of tables per face and hinge, fitted by image MSE.
    #[serde(rename = "HETER")]
    Heter,
    /// Diagonal Gaussian posterior over the homogeneous tables.
    #[serde(rename = "BDP")]
    Bdp,
}

/// Optimizer and Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Step size of means and deterministic entries, in units of the prior
    /// std of their group.
    pub lr: f64,
    /// Step size of the raw scales `eta`, in units of `max(1, prior std)`.
    pub lr_eta: f64,
    /// Monte Carlo samples per epoch.
    pub mc_samples: usize,
    /// Initial posterior std as a fraction of the prior mean.
    pub init_std_fraction: f64,
    pub seed: u64,
    pub likelihood: LikelihoodSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            lr_eta: 5e-2,
            mc_samples: 4,
            init_std_fraction: 0.01,
            seed: 0,
            likelihood: LikelihoodSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.lr) {
            return Err(Error::schema("train.lr", "must be positive"));
        }
        if !pos(self.lr_eta) {
            return Err(Error::schema("train.lr_eta", "must be positive"));
        }
        if self.mc_samples == 0 {
            return Err(Error::schema("train.mc_samples", "must be at least 1"));
        }
        if !pos(self.init_std_fraction) {
            return Err(Error::schema("train.init_std_fraction", "must be positive"));
        }
        self.likelihood.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub data_term: f64,
    pub kl_term: f64,
    /// Norm of the gradient in optimizer units (scaled by the step scales).
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Learned {
    Material(MaterialField),
    Posterior(VariationalPosterior),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest logged loss.
    pub best: Learned,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Parameters after the last update.
    pub last: Learned,
    pub log: Vec<EpochLog>,
}

/// Adaptive-moment optimizer over `p = p0 + scale * z`, stepping in `z`.
#[derive(Clone, Debug)]
pub struct Adam {
    scale: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// `scale[i]` is the learning rate times the unit of coordinate `i`.
    pub fn new(scale: Vec<f64>) -> Self {
        let n = scale.len();
        Self {
            scale,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let dir = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            params[i] -= self.scale[i] * dir;
        }
    }
}

/// Projects deterministic tables onto the admissible set.
fn project(kind: MaterialKind, faces: usize, hinges: usize, p: &mut [f64]) {
    let (ns, nb) = match kind {
        MaterialKind::Homogeneous => (1, 1),
        MaterialKind::Heterogeneous => (faces, hinges),
    };
    for f in 0..ns * STRETCH_PARAMS / STRETCH_COLS {
        let row = &mut p[f * STRETCH_COLS..(f + 1) * STRETCH_COLS];
        let r = floor_stretch_row([row[0], row[1], row[2], row[3]]);
        row.copy_from_slice(&r);
    }
    for v in &mut p[ns * STRETCH_PARAMS..ns * STRETCH_PARAMS + nb * (HOMOGENEOUS_PARAMS - STRETCH_PARAMS)] {
        *v = v.max(BEND_FLOOR);
    }
}

/// Homogeneous-layout index of entry `i` of a flattened field.
fn homogeneous_index(field: &MaterialField, i: usize) -> usize {
    match field {
        MaterialField::Homogeneous(_) => i,
        MaterialField::Heterogeneous { stretch, .. } => {
            let ns = stretch.len() * STRETCH_PARAMS;
            if i < ns {
                i % STRETCH_PARAMS
            } else {
                STRETCH_PARAMS + (i - ns) % (HOMOGENEOUS_PARAMS - STRETCH_PARAMS)
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch })
    }
}

/// Initial parameters of a model: prior mean tables, or the posterior
/// centered on them.
pub fn initial_parameters(kind: ModelKind, model: &DrapeModel, prior: &PriorSpec, cfg: &TrainConfig) -> Result<Learned> {
    let mean = Material::from_slice(&prior.mean)?;
    Ok(match kind {
        ModelKind::Homo => Learned::Material(MaterialField::Homogeneous(mean)),
        ModelKind::Heter => Learned::Material(MaterialField::tied(&mean, model.face_count(), model.hinge_count())),
        ModelKind::Bdp => Learned::Posterior(VariationalPosterior::from_prior(prior, cfg.init_std_fraction)),
    })
}

/// Fits a model from its prior-mean initialization.
pub fn train(
    kind: ModelKind,
    model: &DrapeModel,
    data: &Observations,
    prior: &PriorSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let init = initial_parameters(kind, model, prior, cfg)?;
    train_from(init, model, data, prior, cfg, on_epoch)
}

/// Fits a model from the given parameters. Each epoch evaluates the loss
/// and its gradient at the current parameters, logs them and takes one
/// optimizer step.
pub fn train_from(
    init: Learned,
    model: &DrapeModel,
    data: &Observations,
    prior: &PriorSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match init {
        Learned::Material(field) => train_material(field, model, data, prior, cfg, on_epoch),
        Learned::Posterior(post) => train_posterior(post, model, data, prior, cfg, on_epoch),
    }
}

fn train_material(
    field: MaterialField,
    model: &DrapeModel,
    data: &Observations,
    prior: &PriorSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let (faces, hinges) = (model.face_count(), model.hinge_count());
    field.check_sizes(faces, hinges)?;
    let kind = field.kind();
    let mut params = field.flatten();
    let unit: Vec<f64> = (0..params.len()).map(|i| prior.std[homogeneous_index(&field, i)]).collect();
    let mut adam = Adam::new(unit.iter().map(|u| cfg.lr * u).collect());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, params.clone());
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let current = MaterialField::unflatten(kind, faces, hinges, &params)?;
        let ev = model
            .data_term(&current, data, DataLoss::Mse)
            .map_err(|e| Error::Epoch {
                epoch,
                source: Box::new(e),
            })?;
        check_loss(ev.value, epoch)?;
        let zgrad: Vec<f64> = ev.grad.iter().zip(&unit).map(|(g, u)| g * u).collect();
        let entry = EpochLog {
            epoch,
            loss: ev.value,
            data_term: ev.value,
            kl_term: 0.0,
            grad_norm: norm(&zgrad),
            seconds: 0.0,
        };
        if ev.value < best.0 {
            best = (ev.value, epoch, params.clone());
        }
        adam.step(&mut params, &ev.grad);
        project(kind, faces, hinges, &mut params);
        let entry = EpochLog {
            seconds: start.elapsed().as_secs_f64(),
            ..entry
        };
        log::info!("epoch {epoch} loss {:.6e} |g| {:.3e}", entry.loss, entry.grad_norm);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        best: Learned::Material(MaterialField::unflatten(kind, faces, hinges, &best.2)?),
        best_epoch: best.1,
        best_loss: best.0,
        last: Learned::Material(MaterialField::unflatten(kind, faces, hinges, &params)?),
        log,
    })
}

/// Noise vectors of one epoch, one independent stream per epoch.
pub fn epoch_noise(seed: u64, epoch: usize, samples: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    (0..samples).map(|_| standard_normal(&mut rng)).collect()
}

fn train_posterior(
    post: VariationalPosterior,
    model: &DrapeModel,
    data: &Observations,
    prior: &PriorSpec,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    post.validate()?;
    let n = post.mu.len();
    // [mu, eta] in one vector
    let mut params: Vec<f64> = post.mu.iter().chain(&post.eta).copied().collect();
    let unit: Vec<f64> = prior.std.iter().copied().chain(prior.std.iter().map(|s| s.max(1.0))).collect();
    let lrs: Vec<f64> = (0..2 * n)
        .map(|i| if i < n { cfg.lr } else { cfg.lr_eta } * unit[i])
        .collect();
    let mut adam = Adam::new(lrs);
    let mut log = Vec::with_capacity(cfg.epochs);
    let split = |p: &[f64]| VariationalPosterior {
        mu: p[..n].to_vec(),
        eta: p[n..].to_vec(),
    };
    let mut best = (f64::INFINITY, 0, params.clone());
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let q = split(&params);
        let eps = epoch_noise(cfg.seed, epoch, cfg.mc_samples);
        let ev = elbo_loss(model, &q, prior, &cfg.likelihood, data, &eps).map_err(|e| Error::Epoch {
            epoch,
            source: Box::new(e),
        })?;
        check_loss(ev.loss, epoch)?;
        let grad: Vec<f64> = ev.grad_mu.iter().chain(&ev.grad_eta).copied().collect();
        let zgrad: Vec<f64> = grad.iter().zip(&unit).map(|(g, u)| g * u).collect();
        if ev.loss < best.0 {
            best = (ev.loss, epoch, params.clone());
        }
        adam.step(&mut params, &grad);
        let entry = EpochLog {
            epoch,
            loss: ev.loss,
            data_term: ev.data_term,
            kl_term: ev.kl_term,
            grad_norm: norm(&zgrad),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} loss {:.6e} data {:.6e} kl {:.6e} |g| {:.3e}",
            entry.loss,
            entry.data_term,
            entry.kl_term,
            entry.grad_norm
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        best: Learned::Posterior(split(&best.2)),
        best_epoch: best.1,
        best_loss: best.0,
        last: Learned::Posterior(split(&params)),
        log,
    })
}

/// Result of drawing posterior samples and keeping the best fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestOfK {
    pub best_index: usize,
    pub best_mse: f64,
    /// Binary-silhouette MSE per sample; `None` where the simulation failed.
    pub mses: Vec<Option<f64>>,
}

/// Draws `k` heterogeneous fields from the posterior (sample `i` uses
/// stream `i` of `seed`), simulates each and scores its binary silhouette
/// against `target`.
/// Random stream of posterior sample `index`; sample `i` of a run is the
/// same whatever the sample count or thread count.
pub fn sample_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn best_of_k(
    model: &DrapeModel,
    post: &VariationalPosterior,
    target: &SilhouetteImage,
    k: usize,
    seed: u64,
) -> Result<BestOfK> {
    if k == 0 {
        return Err(Error::invalid("at least one posterior sample is required"));
    }
    let mses: Vec<Option<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(seed, i);
            let mut score = || -> Result<f64> {
                let field = sample_material(post, model.face_count(), model.hinge_count(), &mut rng)?;
                let state = model.drape(&field)?;
                image_mse(&model.binary_silhouette(&state.x)?, target)
            };
            match score() {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("posterior sample {i} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let (best_index, best_mse) = mses
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|m| (i, m)))
        .fold((usize::MAX, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
    if best_index == usize::MAX {
        return Err(Error::Sample {
            index: 0,
            source: Box::new(Error::Empty("every posterior sample failed".into())),
        });
    }
    Ok(BestOfK {
        best_index,
        best_mse,
        mses,
    })
}
