//! One JSON document holding every knob of a run.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected. Relative paths are resolved against the directory of the
//! config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{SimParams, DEFAULT_HANDLE_STIFFNESS, GRAVITY};
use crate::error::{Error, Result};
use crate::inference::{DrapeModel, ModelKind, PriorConfig, PriorSpec, TrainConfig};
use crate::material::{load_material, Material, MaterialField};
use crate::mesh::{generate_disk_mesh, load_obj, Mesh, MeshAssets};
use crate::render::CameraSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// OBJ file to load instead of generating a disk.
    pub path: Option<PathBuf>,
    /// Disk radius (m).
    pub radius: f64,
    /// Target edge length of the generated disk (m).
    pub target_edge_length: f64,
    /// Area density (kg/m^2); a dataset fabric's density takes precedence.
    pub density: f64,
    /// Radius of the pinned support region (m).
    pub pin_radius: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            path: None,
            radius: 0.15,
            target_edge_length: 0.0054,
            density: 0.1,
            pin_radius: 0.09,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Time step (s).
    pub h: f64,
    pub steps: usize,
    /// Handle stiffness (N/m).
    pub k_h: f64,
    /// Mass-proportional damping (1/s).
    pub damping: f64,
    pub gravity: [f64; 3],
    pub exact_jacobian: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            steps: 100,
            k_h: DEFAULT_HANDLE_STIFFNESS,
            damping: 0.0,
            gravity: GRAVITY,
            exact_jacobian: false,
        }
    }
}

impl SimConfig {
    pub fn params(&self) -> SimParams {
        SimParams {
            h: self.h,
            steps: self.steps,
            handle_stiffness: self.k_h,
            damping: self.damping,
            gravity: self.gravity,
            exact_jacobian: self.exact_jacobian,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Soft edge width (pixels).
    pub sharpness: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { sharpness: 1.0 }
    }
}

/// Material used by forward commands: a file, or uniform tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub path: Option<PathBuf>,
    /// `c11 = c22 = c33` (N/m).
    pub stretch: f64,
    pub coupling: f64,
    /// N m.
    pub bend: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            path: None,
            stretch: 50.0,
            coupling: 0.3,
            bend: 1e-4,
        }
    }
}

/// Training data: a manifest (optionally one fabric of it) or bare images.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub fabric: Option<u32>,
    pub images: Vec<PathBuf>,
    /// Observed final meshes (OBJ) in the simulation mesh's vertex order.
    pub meshes: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub posterior: Option<PathBuf>,
    pub count: usize,
    /// Silhouette to score samples against.
    pub target: Option<PathBuf>,
    /// Write every sampled material table next to its silhouette.
    pub write_materials: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            posterior: None,
            count: 16,
            target: None,
            write_materials: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub predicted_image: Option<PathBuf>,
    pub observed_image: Option<PathBuf>,
    pub predicted_mesh: Option<PathBuf>,
    pub observed_mesh: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelledPath {
    pub label: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub posteriors: Vec<LabelledPath>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Relative parameter perturbation of the central differences.
    pub perturbation: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            perturbation: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFabric {
    pub index: u32,
    pub material_name: String,
    pub weave: String,
    pub density: f64,
    pub thickness: f64,
    pub material: MaterialConfig,
    #[serde(default = "one")]
    pub samples: u32,
    /// Relative per-element jitter of the stiffness tables.
    #[serde(default)]
    pub jitter: f64,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub fabrics: Vec<SynthFabric>,
}

/// Complete run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub sim: SimConfig,
    pub camera: CameraSpec,
    pub render: RenderConfig,
    pub material: MaterialConfig,
    pub model: Option<ModelKind>,
    pub prior: PriorConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    pub posterior: PosteriorConfig,
    pub gradcheck: GradcheckConfig,
    pub synth: SynthConfig,
    pub seed: u64,
    /// Worker threads; affects speed only.
    pub threads: Option<usize>,
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn positive(v: f64, path: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::schema(path, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Parses a config document; relative paths are resolved against `base`.
    pub fn from_json_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::schema("config", e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            std::env::current_dir().map_err(|e| Error::io(".", e))?
        } else {
            base
        };
        Self::from_json_str(&text, &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                absolutize(base, p)
            }
        };
        opt(&mut self.mesh.path);
        opt(&mut self.material.path);
        opt(&mut self.data.manifest);
        for p in self.data.images.iter_mut().chain(self.data.meshes.iter_mut()) {
            absolutize(base, p);
        }
        opt(&mut self.sample.posterior);
        opt(&mut self.sample.target);
        opt(&mut self.eval.predicted_image);
        opt(&mut self.eval.observed_image);
        opt(&mut self.eval.predicted_mesh);
        opt(&mut self.eval.observed_mesh);
        for p in &mut self.posterior.posteriors {
            absolutize(base, &mut p.path);
        }
        for f in &mut self.synth.fabrics {
            opt(&mut f.material.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.path.is_none() {
            positive(self.mesh.radius, "mesh.radius")?;
            positive(self.mesh.target_edge_length, "mesh.target_edge_length")?;
        }
        positive(self.mesh.density, "mesh.density")?;
        positive(self.mesh.pin_radius, "mesh.pin_radius")?;
        positive(self.sim.h, "sim.h")?;
        if !(self.sim.k_h >= 0.0 && self.sim.damping >= 0.0) {
            return Err(Error::schema("sim", "k_h and damping must be non-negative"));
        }
        self.camera
            .validate()
            .map_err(|e| Error::schema("camera", e.to_string()))?;
        positive(self.render.sharpness, "render.sharpness")?;
        PriorSpec::from_config(&self.prior)?;
        self.train.validate()?;
        positive(self.gradcheck.perturbation, "gradcheck.perturbation")?;
        if self.threads == Some(0) {
            return Err(Error::schema("threads", "must be at least 1"));
        }
        Ok(())
    }

    /// Training settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        PriorSpec::from_config(&self.prior)
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match &self.mesh.path {
            Some(p) => load_obj(p),
            None => generate_disk_mesh(self.mesh.radius, self.mesh.target_edge_length),
        }
    }

    /// Simulation and renderer for a cloth of the given density.
    pub fn build_model(&self, mesh: &Mesh, density: f64) -> Result<DrapeModel> {
        let assets = MeshAssets::build(mesh, density, self.mesh.pin_radius)?;
        DrapeModel::new(&assets, self.sim.params(), self.camera, self.render.sharpness)
    }

    pub fn material_field(&self) -> Result<MaterialField> {
        material_from_config(&self.material)
    }
}

pub fn material_from_config(m: &MaterialConfig) -> Result<MaterialField> {
    match &m.path {
        Some(p) => load_material(p),
        None => {
            positive(m.stretch, "material.stretch")?;
            positive(m.bend, "material.bend")?;
            Ok(MaterialField::Homogeneous(Material::uniform(m.stretch, m.coupling, m.bend)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json_str("{}", Path::new("/tmp")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sim.steps, 100);
        assert_eq!(c.train.likelihood.sigma2, 0.01);
        assert_eq!(c.train.mc_samples, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"bogus": 1}"#, r#"{"sim": {"hh": 0.1}}"#, r#"{"train": {"likelihood": {"s": 1}}}"#] {
            let e = RunConfig::from_json_str(doc, Path::new("/tmp")).unwrap_err();
            assert_eq!(e.category(), crate::ErrorCategory::Config, "{doc}");
        }
    }

    #[test]
    fn paths_resolve_against_base() {
        let c = RunConfig::from_json_str(
            r#"{"data": {"images": ["a.png", "/abs/b.png"]}, "model": "BDP"}"#,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(c.data.images, vec![PathBuf::from("/base/a.png"), PathBuf::from("/abs/b.png")]);
        assert_eq!(c.model, Some(ModelKind::Bdp));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.sim.steps = 7;
        c.data.manifest = Some("/x/m.json".into());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&text, Path::new("/elsewhere")).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = RunConfig::from_json_str(r#"{"sim": {"h": -1}}"#, Path::new("/")).unwrap_err();
        assert!(e.to_string().contains("sim.h"));
        let e = RunConfig::from_json_str(r#"{"camera": {"size": 8}}"#, Path::new("/")).unwrap_err();
        assert_eq!(e.category(), crate::ErrorCategory::Config);
    }
}
