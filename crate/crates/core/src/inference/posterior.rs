//! Diagonal Gaussian posterior and prior over the homogeneous material layout.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{
    floor_stretch_row, BendStiffness, Material, MaterialField, StretchStiffness, BEND_FLOOR, BEND_PARAMS,
    HOMOGENEOUS_PARAMS, STRETCH_COLS, STRETCH_PARAMS,
};
use crate::metrics::DiagGaussian;

/// Version tag of the posterior file layout.
pub const POSTERIOR_LAYOUT_VERSION: u32 = 1;

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `s > 0`.
pub fn softplus_inv(s: f64) -> f64 {
    s + (-(-s).exp_m1()).ln()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameter group of a homogeneous-layout index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// `c11`, `c22`, `c33` entries (N/m).
    Stretch,
    /// `c12` entries (dimensionless).
    Coupling,
    /// Bending entries (N m).
    Bend,
}

pub fn param_group(index: usize) -> ParamGroup {
    if index >= STRETCH_PARAMS {
        ParamGroup::Bend
    } else if index % STRETCH_COLS == 1 {
        ParamGroup::Coupling
    } else {
        ParamGroup::Stretch
    }
}

/// Group means of the prior; each entry's std is `relative_std` times its mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// N/m.
    pub stretch: f64,
    pub coupling: f64,
    /// N m.
    pub bend: f64,
    pub relative_std: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            stretch: 50.0,
            coupling: 0.3,
            bend: 1e-4,
            relative_std: 0.5,
        }
    }
}

/// Fixed diagonal Gaussian prior over the 39 homogeneous entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PriorSpec {
    pub fn from_config(cfg: &PriorConfig) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(cfg.stretch) && ok(cfg.coupling) && ok(cfg.bend) && ok(cfg.relative_std)) {
            return Err(Error::schema("prior", "means and relative_std must be positive"));
        }
        let mean = Material::uniform(cfg.stretch, cfg.coupling, cfg.bend).to_vec();
        let std = mean.iter().map(|m| m * cfg.relative_std).collect();
        Ok(Self { mean, std })
    }

    pub fn gaussian(&self) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::from_config(&PriorConfig::default()).expect("default prior is valid")
    }
}

/// Pixel noise model of the silhouette likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodSpec {
    /// Pixel noise variance (intensity units squared).
    pub sigma2: f64,
    /// Multiplier of the data term; 0 leaves only the prior.
    pub weight: f64,
}

impl Default for LikelihoodSpec {
    fn default() -> Self {
        Self {
            sigma2: 0.01,
            weight: 1.0,
        }
    }
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::schema("likelihood.sigma2", "must be positive"));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::schema("likelihood.weight", "must be non-negative"));
        }
        Ok(())
    }
}

/// `q(tau) = N(mu, softplus(eta)^2)` over the homogeneous layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalPosterior {
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
}

impl VariationalPosterior {
    /// Mean at the prior mean, std at `init_fraction` of it.
    pub fn from_prior(prior: &PriorSpec, init_fraction: f64) -> Self {
        Self {
            mu: prior.mean.clone(),
            eta: prior.mean.iter().map(|m| softplus_inv(m.abs() * init_fraction)).collect(),
        }
    }

    pub fn new(mu: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let p = Self { mu, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [&self.mu, &self.eta] {
            if v.len() != HOMOGENEOUS_PARAMS {
                return Err(Error::LengthMismatch {
                    expected: HOMOGENEOUS_PARAMS,
                    got: v.len(),
                });
            }
        }
        if !self.mu.iter().chain(&self.eta).all(|v| v.is_finite()) {
            return Err(Error::invalid("posterior parameters must be finite"));
        }
        Ok(())
    }

    pub fn std(&self) -> Vec<f64> {
        self.eta.iter().map(|&e| softplus(e)).collect()
    }

    /// Number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.mu.len() + self.eta.len()
    }

    pub fn gaussian(&self) -> DiagGaussian {
        DiagGaussian {
            mean: self.mu.clone(),
            std: self.std(),
        }
    }

    pub fn mean_material(&self) -> Result<Material> {
        Material::from_slice(&self.mu)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorFile {
    layout_version: u32,
    mu: Vec<f64>,
    eta: Vec<f64>,
}

pub fn posterior_to_json(post: &VariationalPosterior) -> serde_json::Value {
    serde_json::to_value(PosteriorFile {
        layout_version: POSTERIOR_LAYOUT_VERSION,
        mu: post.mu.clone(),
        eta: post.eta.clone(),
    })
    .expect("posterior serializes")
}

pub fn posterior_from_json(v: &serde_json::Value) -> Result<VariationalPosterior> {
    let f: PosteriorFile = serde_json::from_value(v.clone())?;
    if f.layout_version != POSTERIOR_LAYOUT_VERSION {
        return Err(Error::schema(
            "layout_version",
            format!("expected {POSTERIOR_LAYOUT_VERSION}, got {}", f.layout_version),
        ));
    }
    VariationalPosterior::new(f.mu, f.eta)
}

pub fn save_posterior(post: &VariationalPosterior, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&posterior_to_json(post))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_posterior(path: &Path) -> Result<VariationalPosterior> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    posterior_from_json(&serde_json::from_str(&text)?)
}

/// `tau = mu + softplus(eta) * eps`.
pub fn reparam_sample(post: &VariationalPosterior, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != post.mu.len() {
        return Err(Error::LengthMismatch {
            expected: post.mu.len(),
            got: eps.len(),
        });
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.eta)
        .zip(eps)
        .map(|((m, e), x)| m + softplus(*e) * x)
        .collect())
}

fn check_len(tau: &[f64], n: usize) -> Result<()> {
    if tau.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: tau.len(),
        });
    }
    Ok(())
}

pub fn log_q(tau: &[f64], post: &VariationalPosterior) -> Result<f64> {
    check_len(tau, post.mu.len())?;
    Ok(post.gaussian().log_density(tau))
}

pub fn log_prior(tau: &[f64], prior: &PriorSpec) -> Result<f64> {
    check_len(tau, prior.mean.len())?;
    Ok(prior.gaussian().log_density(tau))
}

/// Standard normal vector of the homogeneous layout size.
pub fn standard_normal(rng: &mut impl Rng) -> Vec<f64> {
    (0..HOMOGENEOUS_PARAMS).map(|_| rng.sample(StandardNormal)).collect()
}

/// Applies the stiffness floors to a sampled homogeneous vector.
pub fn floor_sample(tau: &[f64]) -> Result<Material> {
    let m = Material::from_slice(tau)?;
    let mut stretch = m.stretch;
    for row in stretch.0.iter_mut() {
        *row = floor_stretch_row(*row);
    }
    let mut bend = m.bend;
    for v in bend.0.iter_mut().flatten() {
        *v = v.max(BEND_FLOOR);
    }
    Ok(Material { stretch, bend })
}

/// Independent draw per face (stretching) and per hinge (bending).
pub fn sample_material(post: &VariationalPosterior, faces: usize, hinges: usize, rng: &mut impl Rng) -> Result<MaterialField> {
    post.validate()?;
    let std = post.std();
    let mut draw = |range: std::ops::Range<usize>| -> Vec<f64> {
        range
            .map(|i| post.mu[i] + std[i] * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut stretch = Vec::with_capacity(faces);
    for _ in 0..faces {
        let mut c = StretchStiffness::from_flat(&draw(0..STRETCH_PARAMS));
        for row in c.0.iter_mut() {
            *row = floor_stretch_row(*row);
        }
        stretch.push(c);
    }
    let mut bend = Vec::with_capacity(hinges);
    for _ in 0..hinges {
        let v: Vec<f64> = draw(STRETCH_PARAMS..STRETCH_PARAMS + BEND_PARAMS)
            .into_iter()
            .map(|b| b.max(BEND_FLOOR))
            .collect();
        bend.push(BendStiffness::from_flat(&v));
    }
    Ok(MaterialField::Heterogeneous { stretch, bend })
}
