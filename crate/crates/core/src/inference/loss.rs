//! Data terms, the simulate-render pipeline and the variational loss.

use rayon::prelude::*;

use crate::adjoint::backward_simulate;
use crate::dynamics::{SimParams, SimState, Simulator};
use crate::error::{Error, Result};
use crate::material::{Material, MaterialField};
use crate::mesh::MeshAssets;
use crate::metrics::kl_diag_gauss;
use crate::render::{render_backward, render_binary, render_silhouette, CameraSpec, SilhouetteImage};

use super::posterior::{reparam_sample, sigmoid, LikelihoodSpec, PriorSpec, VariationalPosterior};

/// `-sum_ij ln N(I_ij | pred_ij, sigma2)`.
pub fn nll_image(pred: &SilhouetteImage, obs: &SilhouetteImage, sigma2: f64) -> Result<f64> {
    pred.same_shape(obs)?;
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("pixel variance must be positive"));
    }
    let sq: f64 = pred.data.iter().zip(&obs.data).map(|(p, o)| (o - p) * (o - p)).sum();
    let n = pred.data.len() as f64;
    Ok(0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + sq / (2.0 * sigma2))
}

/// Mean squared vertex distance between two meshes of one topology.
pub fn nll_mesh(pred: &[[f64; 3]], obs: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::LengthMismatch {
            expected: obs.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("mesh without vertices".into()));
    }
    let s: f64 = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (0..3).map(|c| (p[c] - o[c]) * (p[c] - o[c])).sum::<f64>())
        .sum();
    Ok(s / pred.len() as f64)
}

/// Observed drapes of one cloth sample.
#[derive(Clone, Debug, Default)]
pub struct Observations {
    pub silhouettes: Vec<SilhouetteImage>,
    /// Final vertex positions, in the simulation mesh's vertex order.
    pub meshes: Vec<Vec<[f64; 3]>>,
}

impl Observations {
    pub fn silhouettes(images: Vec<SilhouetteImage>) -> Self {
        Self {
            silhouettes: images,
            meshes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.silhouettes.is_empty() && self.meshes.is_empty()
    }
}

/// How predicted silhouettes are compared with observed ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataLoss {
    /// Mean of the per-image pixel MSE.
    Mse,
    /// Sum of per-image Gaussian negative log-likelihoods.
    Gaussian { sigma2: f64 },
}

/// Value and material gradient of a data term.
#[derive(Clone, Debug)]
pub struct DataEval {
    pub value: f64,
    /// Layout of [`MaterialField::flatten`].
    pub grad: Vec<f64>,
    pub state: SimState,
}

/// Simulation, camera and soft renderer of one drape experiment.
#[derive(Clone, Debug)]
pub struct DrapeModel {
    pub sim: Simulator,
    pub camera: CameraSpec,
    /// Logistic edge width of the soft renderer (pixels).
    pub sharpness: f64,
    pub initial: SimState,
}

impl DrapeModel {
    pub fn new(assets: &MeshAssets, params: SimParams, camera: CameraSpec, sharpness: f64) -> Result<Self> {
        camera.validate()?;
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::schema("render.sharpness", "must be positive"));
        }
        let sim = Simulator::new(assets, params)?;
        let initial = sim.initial_state();
        Ok(Self {
            sim,
            camera,
            sharpness,
            initial,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.sim.topology.faces
    }

    pub fn face_count(&self) -> usize {
        self.sim.topology.face_count()
    }

    pub fn hinge_count(&self) -> usize {
        self.sim.topology.hinge_count()
    }

    /// Final state of the drape.
    pub fn drape(&self, material: &MaterialField) -> Result<SimState> {
        Ok(self.sim.simulate(&self.initial, material, false)?.state)
    }

    pub fn soft_silhouette(&self, x: &[[f64; 3]]) -> Result<SilhouetteImage> {
        render_silhouette(x, self.faces(), &self.camera, self.sharpness)
    }

    pub fn binary_silhouette(&self, x: &[[f64; 3]]) -> Result<SilhouetteImage> {
        render_binary(x, self.faces(), &self.camera)
    }

    /// Data term of `material` and its gradient through render and
    /// simulation.
    pub fn data_term(&self, material: &MaterialField, data: &Observations, loss: DataLoss) -> Result<DataEval> {
        if data.is_empty() {
            return Err(Error::Empty("no observations to fit".into()));
        }
        let run = self.sim.simulate(&self.initial, material, true)?;
        let x = &run.state.x;
        let mut value = 0.0;
        let mut gx = vec![[0.0; 3]; x.len()];
        if !data.silhouettes.is_empty() {
            let pred = self.soft_silhouette(x)?;
            let mut gimg = SilhouetteImage::new(pred.width, pred.height);
            let k = data.silhouettes.len() as f64;
            let n = pred.data.len() as f64;
            for obs in &data.silhouettes {
                let (v, scale) = match loss {
                    DataLoss::Mse => (crate::metrics::image_mse(&pred, obs)? / k, 2.0 / (n * k)),
                    DataLoss::Gaussian { sigma2 } => (nll_image(&pred, obs, sigma2)?, 1.0 / sigma2),
                };
                value += v;
                for ((g, p), o) in gimg.data.iter_mut().zip(&pred.data).zip(&obs.data) {
                    *g += scale * (p - o);
                }
            }
            let gr = render_backward(x, self.faces(), &self.camera, self.sharpness, &gimg)?;
            for (a, b) in gx.iter_mut().zip(&gr) {
                for c in 0..3 {
                    a[c] += b[c];
                }
            }
        }
        let k = data.meshes.len() as f64;
        for obs in &data.meshes {
            value += nll_mesh(x, obs)? / k;
            let scale = 2.0 / (x.len() as f64 * k);
            for ((a, p), o) in gx.iter_mut().zip(x).zip(obs) {
                for c in 0..3 {
                    a[c] += scale * (p[c] - o[c]);
                }
            }
        }
        let tape = run.tape.as_ref().expect("tape was recorded");
        let gv = vec![[0.0; 3]; x.len()];
        let bundle = backward_simulate(&self.sim, material, tape, &gx, &gv)?;
        Ok(DataEval {
            value,
            grad: bundle.material,
            state: run.state,
        })
    }
}

/// Monte Carlo estimate of the negative ELBO and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboEval {
    /// `data_term + kl_term`.
    pub loss: f64,
    /// Weighted mean negative log-likelihood over the samples.
    pub data_term: f64,
    /// Closed-form `KL(q || prior)`.
    pub kl_term: f64,
    pub grad_mu: Vec<f64>,
    pub grad_eta: Vec<f64>,
}

/// Negative ELBO with one simulation per noise vector in `eps`:
/// `(1/m) sum_i w * nll(D | tau_i) + KL(q || prior)` with
/// `tau_i = mu + softplus(eta) * eps_i`.
pub fn elbo_loss(
    model: &DrapeModel,
    post: &VariationalPosterior,
    prior: &PriorSpec,
    likelihood: &LikelihoodSpec,
    data: &Observations,
    eps: &[Vec<f64>],
) -> Result<ElboEval> {
    post.validate()?;
    likelihood.validate()?;
    if eps.is_empty() {
        return Err(Error::invalid("at least one Monte Carlo sample is required"));
    }
    let dim = post.mu.len();
    let q = post.gaussian();
    let kl_term = kl_diag_gauss(&q, &prior.gaussian())?;
    let mut grad_mu = vec![0.0; dim];
    let mut grad_eta = vec![0.0; dim];
    // closed-form KL gradient
    for d in 0..dim {
        let (s, sp) = (q.std[d], prior.std[d]);
        grad_mu[d] = (post.mu[d] - prior.mean[d]) / (sp * sp);
        grad_eta[d] = (s - sp) * (s + sp) / (s * sp * sp) * sigmoid(post.eta[d]);
    }
    let mut data_term = 0.0;
    if likelihood.weight > 0.0 {
        let m = eps.len() as f64;
        let loss = DataLoss::Gaussian {
            sigma2: likelihood.sigma2,
        };
        let evals: Vec<Result<(f64, Vec<f64>)>> = eps
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let wrap = |err: Error| Error::Sample {
                    index: i,
                    source: Box::new(err),
                };
                let tau = reparam_sample(post, e).map_err(wrap)?;
                let field = MaterialField::Homogeneous(Material::from_slice(&tau).map_err(wrap)?);
                let ev = model.data_term(&field, data, loss).map_err(wrap)?;
                Ok((ev.value, ev.grad))
            })
            .collect();
        for (e, ev) in eps.iter().zip(evals) {
            let (v, g) = ev?;
            data_term += likelihood.weight * v / m;
            for d in 0..dim {
                let gt = likelihood.weight * g[d] / m;
                grad_mu[d] += gt;
                grad_eta[d] += gt * e[d] * sigmoid(post.eta[d]);
            }
        }
    }
    Ok(ElboEval {
        loss: data_term + kl_term,
        data_term,
        kl_term,
        grad_mu,
        grad_eta,
    })
}
