//! Drape datasets: a JSON manifest of fabrics and silhouette observations.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "fabrics": [{"index": 1, "material": "Cotton", "weave": "Plain",
//!                "sample_count": 3, "density": 0.059, "thickness": 0.188}],
//!   "observations": [{"fabric_index": 1, "sample_id": "cotton-1",
//!                     "image": "images/cotton-1.png", "mesh": null,
//!                     "camera": {"center": [0, 0], "half_extent": 0.18, "size": 256}}]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Density is in kg/m^2,
//! thickness in mm.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::DrapeModel;
use crate::material::{floor_stretch_row, Material, MaterialField, BEND_FLOOR};
use crate::mesh::{save_obj, Mesh};
use crate::render::{load_image, save_png, CameraSpec, SilhouetteImage};

pub const SCHEMA_VERSION: u32 = 1;

/// Default binarization threshold of ingested silhouettes.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-fabric metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricRecord {
    pub index: u32,
    pub material: String,
    pub weave: String,
    #[serde(default)]
    pub sample_count: u32,
    /// Average area density (kg/m^2).
    pub density: f64,
    /// Average thickness (mm).
    pub thickness: f64,
}

/// One drape silhouette of one cloth sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrapeObservation {
    pub fabric_index: u32,
    pub sample_id: String,
    pub image: PathBuf,
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    pub camera: CameraSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub fabrics: Vec<FabricRecord>,
    #[serde(default)]
    pub observations: Vec<DrapeObservation>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            fabrics: Vec::new(),
            observations: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn fabric(&self, index: u32) -> Option<&FabricRecord> {
        self.fabrics.iter().find(|f| f.index == index)
    }

    /// Checks values and cross references, not files.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let mut seen = HashSet::new();
        for (i, f) in self.fabrics.iter().enumerate() {
            if !seen.insert(f.index) {
                return Err(Error::schema(format!("fabrics[{i}].index"), format!("duplicate index {}", f.index)));
            }
            if !(f.density > 0.0 && f.density.is_finite()) {
                return Err(Error::schema(format!("fabrics[{i}].density"), "must be positive"));
            }
            if !(f.thickness > 0.0 && f.thickness.is_finite()) {
                return Err(Error::schema(format!("fabrics[{i}].thickness"), "must be positive"));
            }
        }
        let mut ids = HashSet::new();
        for (i, o) in self.observations.iter().enumerate() {
            if self.fabric(o.fabric_index).is_none() {
                return Err(Error::schema(
                    format!("observations[{i}].fabric_index"),
                    format!("no fabric with index {}", o.fabric_index),
                ));
            }
            if !ids.insert(o.sample_id.as_str()) {
                return Err(Error::schema(
                    format!("observations[{i}].sample_id"),
                    format!("duplicate id '{}'", o.sample_id),
                ));
            }
            o.camera
                .validate()
                .map_err(|e| Error::schema(format!("observations[{i}].camera"), e.to_string()))?;
        }
        Ok(())
    }
}

/// A validated manifest and the directory its paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn observations_of(&self, fabric_index: u32) -> impl Iterator<Item = &DrapeObservation> {
        self.manifest.observations.iter().filter(move |o| o.fabric_index == fabric_index)
    }

    /// Binarized, non-trivial silhouette of an observation.
    pub fn silhouette(&self, obs: &DrapeObservation) -> Result<SilhouetteImage> {
        let ing = ingest_silhouette(&self.resolve(&obs.image), DEFAULT_THRESHOLD)?;
        if ing.image.width != obs.camera.size || ing.image.height != obs.camera.size {
            return Err(Error::schema(
                format!("{}.camera.size", obs.sample_id),
                format!("image is {}x{}", ing.image.width, ing.image.height),
            ));
        }
        check_nontrivial(&ing.image, &obs.image)?;
        Ok(ing.image)
    }
}

/// Reads, validates and checks the referenced files of a manifest.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (i, o) in manifest.observations.iter().enumerate() {
        let files = std::iter::once(("image", &o.image)).chain(o.mesh.as_ref().map(|m| ("mesh", m)));
        for (field, rel) in files {
            let full = root.join(rel);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("observations[{i}].{field} does not exist"),
                    ),
                ));
            }
        }
    }
    if manifest.observations.is_empty() {
        log::warn!("{}: manifest lists no observations", path.display());
    }
    Ok(Dataset { manifest, root })
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A binarized image with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedSilhouette {
    pub image: SilhouetteImage,
    pub source: PathBuf,
    pub threshold: f64,
    pub foreground_fraction: f64,
}

/// Loads a grayscale PNG/PGM and sets pixels `>= threshold` to 1.
pub fn ingest_silhouette(path: &Path, threshold: f64) -> Result<IngestedSilhouette> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let image = load_image(path)?.binarize(threshold);
    let foreground_fraction = image.foreground_fraction();
    Ok(IngestedSilhouette {
        image,
        source: path.to_path_buf(),
        threshold,
        foreground_fraction,
    })
}

/// Rejects silhouettes that are nearly empty or nearly full.
pub fn check_nontrivial(img: &SilhouetteImage, source: &Path) -> Result<()> {
    let f = img.foreground_fraction();
    if f <= 0.01 || f >= 0.99 {
        return Err(Error::Image(format!(
            "{}: foreground fraction {f:.4} outside (0.01, 0.99)",
            source.display()
        )));
    }
    Ok(())
}

/// A generated observation and its hidden material.
#[derive(Clone, Debug)]
pub struct SyntheticObservation {
    pub observation: DrapeObservation,
    /// Material that produced the image; never written next to it.
    pub answer: MaterialField,
    pub final_positions: Vec<[f64; 3]>,
}

/// Per-element multiplicative jitter of a homogeneous material, relative
/// std `jitter`, drawn from `seed`. Zero jitter keeps the material tied.
pub fn jitter_material(material: &Material, faces: usize, hinges: usize, jitter: f64, seed: u64) -> Result<MaterialField> {
    if jitter == 0.0 {
        return Ok(MaterialField::Homogeneous(*material));
    }
    let normal = Normal::new(1.0, jitter).map_err(|e| Error::invalid(format!("jitter: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stretch = Vec::with_capacity(faces);
    for _ in 0..faces {
        let mut s = material.stretch;
        for row in s.0.iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                if k != 1 {
                    *v *= normal.sample(&mut rng);
                }
            }
            *row = floor_stretch_row(*row);
        }
        stretch.push(s);
    }
    let mut bend = Vec::with_capacity(hinges);
    for _ in 0..hinges {
        let mut b = material.bend;
        for v in b.0.iter_mut().flatten() {
            *v = (*v * normal.sample(&mut rng)).max(BEND_FLOOR);
        }
        bend.push(b);
    }
    Ok(MaterialField::Heterogeneous { stretch, bend })
}

/// Simulates `material` on `model`, writes `images/<id>.png` and
/// `meshes/<id>.obj` under `dir` and returns the manifest entry.
pub fn make_synthetic_observation(
    material: &MaterialField,
    model: &DrapeModel,
    fabric_index: u32,
    sample_id: &str,
    dir: &Path,
) -> Result<SyntheticObservation> {
    if sample_id.is_empty() || sample_id.contains(['/', '\\']) {
        return Err(Error::invalid(format!("sample id '{sample_id}' is not a plain file stem")));
    }
    let state = model.drape(material)?;
    let img = model.binary_silhouette(&state.x)?;
    let image = PathBuf::from("images").join(format!("{sample_id}.png"));
    let mesh = PathBuf::from("meshes").join(format!("{sample_id}.obj"));
    for sub in ["images", "meshes"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    save_png(&img, &dir.join(&image))?;
    let draped = Mesh {
        topology: (*model.sim.topology).clone(),
        positions: state.x.clone(),
    };
    save_obj(&draped, &dir.join(&mesh))?;
    Ok(SyntheticObservation {
        observation: DrapeObservation {
            fabric_index,
            sample_id: sample_id.to_string(),
            image,
            mesh: Some(mesh),
            camera: model.camera,
        },
        answer: material.clone(),
        final_positions: state.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimParams;
    use crate::mesh::{generate_disk_mesh, MeshAssets};
    use crate::render::save_pgm;

    fn cotton() -> FabricRecord {
        FabricRecord {
            index: 1,
            material: "Cotton".into(),
            weave: "Plain".into(),
            sample_count: 0,
            density: 0.059,
            thickness: 0.188,
        }
    }

    #[test]
    fn record_loads_verbatim() {
        let j = r#"{"index": 1, "material": "Cotton", "weave": "Plain", "density": 0.059, "thickness": 0.188}"#;
        let f: FabricRecord = serde_json::from_str(j).unwrap();
        assert_eq!(f, cotton());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut m = Manifest {
            fabrics: vec![cotton()],
            ..Manifest::default()
        };
        m.validate().unwrap();
        m.fabrics[0].density = 0.0;
        let e = m.validate().unwrap_err().to_string();
        assert!(e.contains("fabrics[0].density"), "{e}");
        m.fabrics[0].density = 0.059;
        m.schema_version = 9;
        assert!(m.validate().unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn manifest_round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = SilhouetteImage::new(64, 64);
        for i in 0..64 * 20 {
            img.data[i] = 1.0;
        }
        std::fs::create_dir(dir.path().join("images")).unwrap();
        save_png(&img, &dir.path().join("images/a.png")).unwrap();
        let m = Manifest {
            fabrics: vec![cotton()],
            observations: vec![DrapeObservation {
                fabric_index: 1,
                sample_id: "a".into(),
                image: "images/a.png".into(),
                mesh: None,
                camera: CameraSpec {
                    size: 64,
                    ..CameraSpec::default()
                },
            }],
            ..Manifest::default()
        };
        let path = dir.path().join("manifest.json");
        save_manifest(&m, &path).unwrap();
        let a = load_manifest(&path).unwrap();
        save_manifest(&a.manifest, &path).unwrap();
        let b = load_manifest(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.manifest, m);
        assert_eq!(b.silhouette(&m.observations[0]).unwrap(), img);

        let mut broken = m.clone();
        broken.observations[0].image = "images/missing.png".into();
        save_manifest(&broken, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"schema_version": 1, "fabrics": []}"#).unwrap();
        assert!(load_manifest(&path).unwrap().manifest.observations.is_empty());
    }

    #[test]
    fn threshold_rule() {
        let dir = tempfile::tempdir().unwrap();
        let white = SilhouetteImage {
            width: 2,
            height: 2,
            data: vec![1.0; 4],
        };
        let p = dir.path().join("w.pgm");
        save_pgm(&white, &p).unwrap();
        assert_eq!(ingest_silhouette(&p, 0.5).unwrap().image, white);
        let gray = SilhouetteImage {
            data: vec![128.0 / 255.0; 4],
            ..white.clone()
        };
        save_pgm(&gray, &p).unwrap();
        let ing = ingest_silhouette(&p, 128.0 / 255.0).unwrap();
        assert_eq!(ing.image, white);
        assert_eq!(ing.foreground_fraction, 1.0);
        let half = SilhouetteImage {
            data: vec![0.5; 4],
            ..white.clone()
        };
        assert_eq!(half.binarize(0.5), white);
        assert!(check_nontrivial(&white, &p).is_err());
    }

    fn model() -> DrapeModel {
        let mesh = generate_disk_mesh(0.15, 0.05).unwrap();
        let assets = MeshAssets::build(&mesh, 0.1, 0.09).unwrap();
        let params = SimParams {
            steps: 3,
            ..SimParams::default()
        };
        DrapeModel::new(&assets, params, CameraSpec::default(), 1.0).unwrap()
    }

    #[test]
    fn synthetic_files_are_deterministic_and_hide_the_answer() {
        let m = model();
        let mat = MaterialField::Homogeneous(Material::uniform(47.125, 0.3, 1.2345e-4));
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = make_synthetic_observation(&mat, &m, 1, "s0", a.path()).unwrap();
        make_synthetic_observation(&mat, &m, 1, "s0", b.path()).unwrap();
        for rel in [&sa.observation.image, sa.observation.mesh.as_ref().unwrap()] {
            let (x, y) = (std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            assert_eq!(x, y);
            let text = String::from_utf8_lossy(&x);
            assert!(!text.contains("47.125") && !text.contains("1.2345"));
        }
        let back = ingest_silhouette(&a.path().join(&sa.observation.image), 0.5).unwrap();
        assert_eq!(back.image, m.binary_silhouette(&sa.final_positions).unwrap());
        assert!(make_synthetic_observation(&mat, &m, 1, "../x", a.path()).is_err());
    }

    #[test]
    fn jitter_is_seeded() {
        let mat = Material::uniform(50.0, 0.3, 1e-4);
        assert_eq!(jitter_material(&mat, 3, 4, 0.0, 1).unwrap(), MaterialField::Homogeneous(mat));
        let a = jitter_material(&mat, 3, 4, 0.1, 1).unwrap();
        assert_eq!(a, jitter_material(&mat, 3, 4, 0.1, 1).unwrap());
        assert_ne!(a, jitter_material(&mat, 3, 4, 0.1, 2).unwrap());
    }
}
