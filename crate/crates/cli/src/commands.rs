//! One function per subcommand. Each writes its results under `out` and
//! returns the command-specific part of `summary.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use drapefit::config::{material_from_config, RunConfig};
use drapefit::dataset::{
    check_nontrivial, ingest_silhouette, jitter_material, load_manifest, make_synthetic_observation, save_manifest,
    FabricRecord, Manifest, DEFAULT_THRESHOLD,
};
use drapefit::gradcheck::pipeline_gradcheck;
use drapefit::inference::{
    load_posterior, sample_material, sample_stream, save_posterior, train as fit, Learned, ModelKind,
    Observations,
};
use drapefit::material::{save_material, Material, MaterialField};
use drapefit::mesh::{load_obj, save_obj, Mesh};
use drapefit::metrics::{
    gmm_loglik, hausdorff, image_mse, kl_diag_gauss, nearest_material, radius_angle, write_profile_csv,
    GaussianPosteriorSummary, MaterialQuery,
};
use drapefit::render::{load_image, save_png, SilhouetteImage};
use drapefit::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes one JSON document per line.
fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require<'a, T>(v: &'a Option<T>, field: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::schema(field, "required by this command"))
}

/// Observed silhouette of the configured camera size.
fn observed_silhouette(path: &Path, cfg: &RunConfig) -> Result<SilhouetteImage> {
    let ing = ingest_silhouette(path, DEFAULT_THRESHOLD)?;
    if ing.image.width != cfg.camera.size || ing.image.height != cfg.camera.size {
        return Err(Error::schema(
            "camera.size",
            format!(
                "{} is {}x{}, camera renders {}",
                path.display(),
                ing.image.width,
                ing.image.height,
                cfg.camera.size
            ),
        ));
    }
    check_nontrivial(&ing.image, path)?;
    Ok(ing.image)
}

/// Training observations and the cloth density they were taken at.
fn load_observations(cfg: &RunConfig, vertex_count: usize) -> Result<(Observations, f64)> {
    let mut density = cfg.mesh.density;
    let mut silhouettes = Vec::new();
    if let Some(path) = &cfg.data.manifest {
        let ds = load_manifest(path)?;
        let fabric = match cfg.data.fabric {
            Some(i) => ds
                .manifest
                .fabric(i)
                .ok_or_else(|| Error::schema("data.fabric", format!("no fabric with index {i}")))?,
            None if ds.manifest.fabrics.len() == 1 => &ds.manifest.fabrics[0],
            None => return Err(Error::schema("data.fabric", "manifest has several fabrics; pick one")),
        };
        density = fabric.density;
        for obs in ds.observations_of(fabric.index) {
            if obs.camera != cfg.camera {
                return Err(Error::schema(
                    "camera",
                    format!("observation '{}' was taken with a different camera", obs.sample_id),
                ));
            }
            silhouettes.push(ds.silhouette(obs)?);
        }
    }
    for p in &cfg.data.images {
        silhouettes.push(observed_silhouette(p, cfg)?);
    }
    let mut meshes = Vec::new();
    for p in &cfg.data.meshes {
        let m = load_obj(p)?;
        if m.positions.len() != vertex_count {
            return Err(Error::schema(
                "data.meshes",
                format!("{} has {} vertices, expected {vertex_count}", p.display(), m.positions.len()),
            ));
        }
        meshes.push(m.positions);
    }
    let data = Observations { silhouettes, meshes };
    if data.is_empty() {
        return Err(Error::Empty("no observations: set data.manifest, data.images or data.meshes".into()));
    }
    Ok((data, density))
}

fn mesh_summary(mesh: &Mesh) -> Value {
    json!({
        "vertices": mesh.topology.vertex_count,
        "faces": mesh.topology.face_count(),
        "edges": mesh.topology.edges.len(),
        "hinges": mesh.topology.hinge_count(),
    })
}

pub fn meshgen(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let mesh = cfg.build_mesh()?;
    save_obj(&mesh, &out.join("mesh.obj"))?;
    Ok(json!({ "mesh": mesh_summary(&mesh) }))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let mesh = cfg.build_mesh()?;
    let model = cfg.build_model(&mesh, cfg.mesh.density)?;
    let material = cfg.material_field()?;
    let run = model.sim.simulate(&model.initial, &material, false)?;
    write_jsonl(&out.join("steps.jsonl"), &run.log)?;
    let draped = Mesh {
        topology: mesh.topology.clone(),
        positions: run.state.x.clone(),
    };
    save_obj(&draped, &out.join("final.obj"))?;
    let img = model.binary_silhouette(&run.state.x)?;
    save_png(&img, &out.join("silhouette.png"))?;
    let profile = radius_angle(&img, &cfg.camera)?;
    write_profile_csv(&profile, &out.join("radius.csv"))?;
    let max_velocity = run.log.last().map_or(0.0, |s| s.max_velocity);
    Ok(json!({
        "mesh": mesh_summary(&mesh),
        "steps": run.log.len(),
        "final_max_velocity": max_velocity,
        "foreground_fraction": img.foreground_fraction(),
        "mean_radius": profile.mean(),
    }))
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let kind = cfg.model.unwrap_or(ModelKind::Homo);
    let mesh = cfg.build_mesh()?;
    let (data, density) = load_observations(cfg, mesh.topology.vertex_count)?;
    let model = cfg.build_model(&mesh, density)?;
    let prior = cfg.prior_spec()?;
    let tc = cfg.train_config();
    let log_path = out.join("train_log.jsonl");
    let mut log = create(&log_path)?;
    let mut io_err = None;
    let outcome = fit(kind, &model, &data, &prior, &tc, &mut |l| {
        log::info!(
            "epoch {} loss {:.6e} data {:.6e} kl {:.6e}",
            l.epoch,
            l.loss,
            l.data_term,
            l.kl_term
        );
        let r = serde_json::to_writer(&mut log, l)
            .map_err(Error::from)
            .and_then(|_| log.write_all(b"\n").map_err(|e| Error::io(&log_path, e)));
        if let Err(e) = r {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let mut summary = json!({
        "model": kind,
        "epochs": tc.epochs,
        "observations": data.silhouettes.len() + data.meshes.len(),
        "best_epoch": outcome.best_epoch,
        "best_loss": outcome.best_loss,
    });
    let map = summary.as_object_mut().expect("object");
    let fitted = match &outcome.best {
        Learned::Material(field) => {
            save_material(field, &out.join("material.json"))?;
            map.insert("parameter_count".into(), json!(field.parameter_count()));
            field.clone()
        }
        Learned::Posterior(q) => {
            save_posterior(q, &out.join("posterior.json"))?;
            let kl = kl_diag_gauss(&q.gaussian(), &prior.gaussian())?;
            map.insert("parameter_count".into(), json!(q.scalar_count()));
            map.insert("kl_to_prior".into(), json!(kl));
            MaterialField::Homogeneous(q.mean_material()?)
        }
    };
    let state = model.drape(&fitted)?;
    let img = model.binary_silhouette(&state.x)?;
    save_png(&img, &out.join("fitted.png"))?;
    if !data.silhouettes.is_empty() {
        let mut mse = 0.0;
        for obs in &data.silhouettes {
            mse += image_mse(&img, obs)?;
        }
        map.insert("fitted_mse".into(), json!(mse / data.silhouettes.len() as f64));
    }
    Ok(summary)
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let post = load_posterior(require(&cfg.sample.posterior, "sample.posterior")?)?;
    if cfg.sample.count == 0 {
        return Err(Error::schema("sample.count", "must be at least 1"));
    }
    let mesh = cfg.build_mesh()?;
    let model = cfg.build_model(&mesh, cfg.mesh.density)?;
    let target = cfg
        .sample
        .target
        .as_ref()
        .map(|p| observed_silhouette(p, cfg))
        .transpose()?;
    let dir = out.join("samples");
    mkdir(&dir)?;
    use rayon::prelude::*;
    let rows = (0..cfg.sample.count)
        .into_par_iter()
        .map(|i| -> Result<Value> {
            let mut rng = sample_stream(cfg.seed, i);
            let field = sample_material(&post, model.face_count(), model.hinge_count(), &mut rng)?;
            let state = model.drape(&field)?;
            let img = model.binary_silhouette(&state.x)?;
            save_png(&img, &dir.join(format!("{i:04}.png")))?;
            if cfg.sample.write_materials {
                save_material(&field, &dir.join(format!("{i:04}.json")))?;
            }
            let mse = target.as_ref().map(|t| image_mse(&img, t)).transpose()?;
            Ok(json!({ "index": i, "mse": mse }))
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&out.join("samples.jsonl"), &rows)?;
    let mut summary = json!({ "count": cfg.sample.count });
    if target.is_some() {
        let (best, mse) = rows
            .iter()
            .filter_map(|r| Some((r["index"].as_u64()?, r["mse"].as_f64()?)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        summary["best_index"] = json!(best);
        summary["best_mse"] = json!(mse);
    }
    Ok(summary)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let e = &cfg.eval;
    let mut summary = json!({});
    match (&e.predicted_image, &e.observed_image) {
        (Some(p), Some(o)) => {
            let pred = load_image(p)?;
            let obs = load_image(o)?;
            summary["mse"] = json!(image_mse(&pred, &obs)?);
            for (name, img) in [("predicted", &pred), ("observed", &obs)] {
                let prof = radius_angle(&img.binarize(DEFAULT_THRESHOLD), &cfg.camera)?;
                write_profile_csv(&prof, &out.join(format!("radius_{name}.csv")))?;
                summary[format!("mean_radius_{name}")] = json!(prof.mean());
            }
        }
        (None, None) => {}
        _ => return Err(Error::schema("eval", "predicted_image and observed_image go together")),
    }
    match (&e.predicted_mesh, &e.observed_mesh) {
        (Some(p), Some(o)) => {
            summary["hausdorff"] = json!(hausdorff(&load_obj(p)?.positions, &load_obj(o)?.positions)?);
        }
        (None, None) => {}
        _ => return Err(Error::schema("eval", "predicted_mesh and observed_mesh go together")),
    }
    if summary.as_object().is_some_and(|m| m.is_empty()) {
        return Err(Error::schema("eval", "nothing to compare"));
    }
    Ok(summary)
}

pub fn posterior(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let entries = &cfg.posterior.posteriors;
    if entries.is_empty() {
        return Err(Error::schema("posterior.posteriors", "at least one posterior is required"));
    }
    let comps = entries
        .iter()
        .map(|e| {
            Ok(GaussianPosteriorSummary {
                label: e.label.clone(),
                gaussian: load_posterior(&e.path)?.gaussian(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out.join("kl_table.csv"))
        .map_err(|e| Error::io(out.join("kl_table.csv"), std::io::Error::other(e.to_string())))?;
    let csv_err = |e: csv::Error| Error::io(out.join("kl_table.csv"), std::io::Error::other(e.to_string()));
    let header: Vec<&str> = std::iter::once("from\\to").chain(comps.iter().map(|c| c.label.as_str())).collect();
    w.write_record(&header).map_err(csv_err)?;
    let mut table = Vec::new();
    for a in &comps {
        let mut row = vec![a.label.clone()];
        let mut vals = Vec::new();
        for b in &comps {
            let kl = kl_diag_gauss(&a.gaussian, &b.gaussian)?;
            row.push(format!("{kl:.8e}"));
            vals.push(kl);
        }
        w.write_record(&row).map_err(csv_err)?;
        table.push(vals);
    }
    w.flush().map_err(|e| Error::io(out.join("kl_table.csv"), e))?;
    let mut gmm = Vec::new();
    for c in &comps {
        let ll = gmm_loglik(&comps, &c.gaussian.mean)?;
        let ranked = nearest_material(&comps, MaterialQuery::Posterior(&c.gaussian))?;
        let nearest = ranked.iter().find(|(l, _)| *l != c.label).map(|(l, _)| l.clone());
        gmm.push(json!({ "label": c.label, "gmm_loglik_of_mean": ll, "nearest_other": nearest }));
    }
    Ok(json!({
        "labels": comps.iter().map(|c| &c.label).collect::<Vec<_>>(),
        "kl": table,
        "components": gmm,
    }))
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let mesh = cfg.build_mesh()?;
    let model = cfg.build_model(&mesh, cfg.mesh.density)?;
    let material = match cfg.material_field()? {
        MaterialField::Homogeneous(m) => m,
        MaterialField::Heterogeneous { .. } => {
            return Err(Error::schema("material", "gradcheck needs a homogeneous material"))
        }
    };
    let target = match cfg.data.images.first() {
        Some(p) => observed_silhouette(p, cfg)?,
        None => {
            let prior = cfg.prior_spec()?;
            let reference = MaterialField::Homogeneous(Material::from_slice(&prior.mean)?);
            model.binary_silhouette(&model.drape(&reference)?.x)?
        }
    };
    let report = pipeline_gradcheck(&model, &material, &target, &cfg.gradcheck)?;
    write_jsonl(&out.join("components.jsonl"), &report.components)?;
    Ok(json!({
        "mesh": mesh_summary(&mesh),
        "loss": report.loss,
        "checked": report.checked,
        "passed": report.passed,
        "kinks": report.kinks,
        "pass_fraction": report.pass_fraction,
    }))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Value> {
    if cfg.synth.fabrics.is_empty() {
        return Err(Error::schema("synth.fabrics", "at least one fabric is required"));
    }
    let mesh = cfg.build_mesh()?;
    let answers = out.join("answers");
    mkdir(&answers)?;
    let mut manifest = Manifest::default();
    let mut written = 0u64;
    for (fi, f) in cfg.synth.fabrics.iter().enumerate() {
        let material = match material_from_config(&f.material)? {
            MaterialField::Homogeneous(m) => m,
            MaterialField::Heterogeneous { .. } => {
                return Err(Error::schema(
                    format!("synth.fabrics[{fi}].material"),
                    "base material must be homogeneous",
                ))
            }
        };
        manifest.fabrics.push(FabricRecord {
            index: f.index,
            material: f.material_name.clone(),
            weave: f.weave.clone(),
            sample_count: f.samples,
            density: f.density,
            thickness: f.thickness,
        });
        let model = cfg.build_model(&mesh, f.density)?;
        for s in 0..f.samples {
            let id = format!("f{}_s{}", f.index, s);
            let seed = cfg.seed.wrapping_add(written);
            written += 1;
            let field = jitter_material(&material, model.face_count(), model.hinge_count(), f.jitter, seed)?;
            let obs = make_synthetic_observation(&field, &model, f.index, &id, out)?;
            save_material(&obs.answer, &answers.join(format!("{id}.json")))?;
            log::info!("synth: wrote {id}");
            manifest.observations.push(obs.observation);
        }
    }
    let path: PathBuf = out.join("manifest.json");
    save_manifest(&manifest, &path)?;
    Ok(json!({
        "fabrics": manifest.fabrics.len(),
        "observations": manifest.observations.len(),
        "manifest": path,
    }))
}
