//! Top-down silhouette rasterization with a smooth coverage model.
//!
//! Pixel `(col, row)` has its center at `(col + 0.5, row + 0.5)` in image
//! coordinates, with `col = (x - cx + w) / p` and `row = (cy + w - y) / p`
//! for window center `(cx, cy)`, half-extent `w` and pixel size `p = 2w / L`.
//! Soft coverage is `1 - prod_f (1 - s(d_f / sigma))`, where `d_f` is the
//! signed distance (pixels, positive inside) from the pixel center to the
//! projected face and `s` the logistic function.

use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Real};
use crate::error::{Error, Result};

/// Faces farther than this many sharpness units outside a pixel leave its
/// survival product bit-for-bit unchanged (`1 + e^-37` rounds to 1).
const CUTOFF: f64 = 37.0;
const TILE: usize = 16;

/// Orthographic top-down camera looking along `-z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    /// Window center (m).
    pub center: [f64; 2],
    /// Window half-extent (m).
    pub half_extent: f64,
    /// Image side (pixels).
    pub size: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            half_extent: 0.18,
            size: 256,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::schema("camera.half_extent", "must be positive"));
        }
        if self.size < 64 {
            return Err(Error::schema("camera.size", "must be at least 64 pixels"));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::schema("camera.center", "must be finite"));
        }
        Ok(())
    }

    /// Pixel edge length (m).
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent / self.size as f64
    }

    /// Continuous image coordinates `(col, row)` of a world point.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let s = self.pixel_size();
        [
            (p[0] - self.center[0] + self.half_extent) / s,
            (self.center[1] + self.half_extent - p[1]) / s,
        ]
    }

    /// World `(x, y)` of continuous image coordinates.
    pub fn unproject(&self, q: [f64; 2]) -> [f64; 2] {
        let s = self.pixel_size();
        [
            q[0] * s + self.center[0] - self.half_extent,
            self.center[1] + self.half_extent - q[1] * s,
        ]
    }

    /// World-to-image mapping written next to exported images.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "size": self.size,
            "center_m": self.center,
            "half_extent_m": self.half_extent,
            "pixel_size_m": self.pixel_size(),
            "origin": "top-left pixel corner",
            "col": "(x - center_x + half_extent) / pixel_size",
            "row": "(center_y + half_extent - y) / pixel_size",
            "view": "orthographic along -z",
        })
    }
}

/// Grayscale image in `[0, 1]`, row-major from the top-left pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SilhouetteImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid(format!(
                "image size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Pixels `>= threshold` become 1, others 0.
    pub fn binarize(&self, threshold: f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
            ..*self
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().filter(|v| **v >= 0.5).count() as f64 / self.data.len().max(1) as f64
    }
}

#[inline(always)]
fn sub2<S: Real>(a: [S; 2], b: [S; 2]) -> [S; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline(always)]
fn cross2<S: Real>(a: [S; 2], b: [S; 2]) -> S {
    a[0] * b[1] - a[1] * b[0]
}

#[inline(always)]
fn dot2<S: Real>(a: [S; 2], b: [S; 2]) -> S {
    a[0] * b[0] + a[1] * b[1]
}

/// Distance from `q` to the segment `ab`.
#[inline(always)]
fn segment_distance<S: Real>(a: [S; 2], b: [S; 2], q: [f64; 2]) -> S {
    let q = [S::cst(q[0]), S::cst(q[1])];
    let e = sub2(b, a);
    let r = sub2(q, a);
    let len2 = dot2(e, e);
    let t = if len2.re() > 0.0 { dot2(r, e).re() / len2.re() } else { 0.0 };
    let d = if t <= 0.0 {
        r
    } else if t >= 1.0 {
        sub2(q, b)
    } else {
        let c = dot2(r, e) / len2;
        [r[0] - e[0] * c, r[1] - e[1] * c]
    };
    let d2 = dot2(d, d);
    if d2.re() > 0.0 {
        d2.sqrt()
    } else {
        S::zero()
    }
}

/// Signed distance (positive inside) from `q` to the triangle `p`, in
/// either orientation.
#[inline(always)]
fn signed_distance<S: Real>(p: [[S; 2]; 3], q: [f64; 2]) -> S {
    let area2 = cross2(sub2(p[1], p[0]), sub2(p[2], p[0])).re();
    let mut dist = f64::INFINITY;
    let mut best = S::zero();
    let mut inside = area2 != 0.0;
    for k in 0..3 {
        let (a, b) = (p[k], p[(k + 1) % 3]);
        let qa = [q[0] - a[0].re(), q[1] - a[1].re()];
        let side = (b[0].re() - a[0].re()) * qa[1] - (b[1].re() - a[1].re()) * qa[0];
        if side * area2 < 0.0 {
            inside = false;
        }
        let d = segment_distance(a, b, q);
        if d.re() < dist {
            dist = d.re();
            best = d;
        }
    }
    if inside {
        best
    } else {
        -best
    }
}

/// Projected faces binned into square tiles, each with the faces whose
/// bounding box grown by `margin` pixels touches it, in face order.
struct Tiles {
    per_side: usize,
    faces: Vec<Vec<u32>>,
}

fn bin_faces(uv: &[[f64; 2]], faces: &[[usize; 3]], size: usize, margin: f64) -> Tiles {
    let per_side = size.div_ceil(TILE);
    let mut bins = vec![Vec::new(); per_side * per_side];
    let limit = size as f64;
    for (fi, f) in faces.iter().enumerate() {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &v in f {
            for c in 0..2 {
                lo[c] = lo[c].min(uv[v][c]);
                hi[c] = hi[c].max(uv[v][c]);
            }
        }
        if !(lo[0].is_finite() && lo[1].is_finite() && hi[0].is_finite() && hi[1].is_finite()) {
            continue;
        }
        if hi[0] + margin < 0.0 || hi[1] + margin < 0.0 || lo[0] - margin > limit || lo[1] - margin > limit {
            continue;
        }
        let tile = |x: f64| ((x.max(0.0) / TILE as f64) as usize).min(per_side - 1);
        let (c0, c1) = (tile(lo[0] - margin), tile(hi[0] + margin));
        let (r0, r1) = (tile(lo[1] - margin), tile(hi[1] + margin));
        for r in r0..=r1 {
            for c in c0..=c1 {
                bins[r * per_side + c].push(fi as u32);
            }
        }
    }
    Tiles { per_side, faces: bins }
}

impl Tiles {
    fn pixels(&self, tile: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tr, tc) = (tile / self.per_side, tile % self.per_side);
        let rows = tr * TILE..((tr + 1) * TILE).min(size);
        let cols = tc * TILE..((tc + 1) * TILE).min(size);
        rows.flat_map(move |r| cols.clone().map(move |c| (c, r)))
    }
}

/// `1 - s(t)` without cancellation.
#[inline(always)]
fn survival(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

fn check_inputs(x: &[[f64; 3]], faces: &[[usize; 3]], camera: &CameraSpec, sharpness: f64) -> Result<()> {
    camera.validate()?;
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(Error::invalid(format!("sharpness must be positive, got {sharpness}")));
    }
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&v| v >= x.len())) {
        return Err(Error::invalid(format!("face {f:?} references a missing vertex")));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("vertex positions must be finite"));
    }
    Ok(())
}

fn face_uv(uv: &[[f64; 2]], f: [usize; 3]) -> [[f64; 2]; 3] {
    f.map(|v| uv[v])
}

/// Soft silhouette of the mesh seen from above; `sharpness` is in pixels.
pub fn render_silhouette(
    x: &[[f64; 3]],
    faces: &[[usize; 3]],
    camera: &CameraSpec,
    sharpness: f64,
) -> Result<SilhouetteImage> {
    check_inputs(x, faces, camera, sharpness)?;
    let n = camera.size;
    let uv: Vec<[f64; 2]> = x.iter().map(|p| camera.project(*p)).collect();
    let tiles = bin_faces(&uv, faces, n, CUTOFF * sharpness);
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..tiles.faces.len())
        .into_par_iter()
        .map(|t| {
            tiles
                .pixels(t, n)
                .map(|(c, r)| {
                    let q = [c as f64 + 0.5, r as f64 + 0.5];
                    let mut prod = 1.0;
                    for &fi in &tiles.faces[t] {
                        let d = signed_distance(face_uv(&uv, faces[fi as usize]), q);
                        if d > -CUTOFF * sharpness {
                            prod *= survival(d / sharpness);
                        }
                    }
                    (c, r, 1.0 - prod)
                })
                .collect()
        })
        .collect();
    let mut img = SilhouetteImage::new(n, n);
    for (c, r, v) in blocks.into_iter().flatten() {
        img.set(c, r, v);
    }
    Ok(img)
}

/// Gradient of `sum_p grad[p] * I[p]` with respect to vertex positions,
/// for the image of [`render_silhouette`] with the same inputs.
pub fn render_backward(
    x: &[[f64; 3]],
    faces: &[[usize; 3]],
    camera: &CameraSpec,
    sharpness: f64,
    grad: &SilhouetteImage,
) -> Result<Vec<[f64; 3]>> {
    check_inputs(x, faces, camera, sharpness)?;
    let n = camera.size;
    if grad.width != n || grad.height != n {
        return Err(Error::invalid(format!(
            "image gradient is {}x{}, camera renders {n}x{n}",
            grad.width, grad.height
        )));
    }
    let uv: Vec<[f64; 2]> = x.iter().map(|p| camera.project(*p)).collect();
    let tiles = bin_faces(&uv, faces, n, CUTOFF * sharpness);
    type D = Dual<f64, 6>;
    let per_tile: Vec<Vec<[f64; 6]>> = (0..tiles.faces.len())
        .into_par_iter()
        .map(|t| {
            let list = &tiles.faces[t];
            let mut acc = vec![[0.0; 6]; list.len()];
            let mut dist = vec![0.0; list.len()];
            let mut surv = vec![0.0; list.len()];
            let mut suffix = vec![0.0; list.len() + 1];
            for (c, r) in tiles.pixels(t, n) {
                let g = grad.get(c, r);
                if g == 0.0 {
                    continue;
                }
                let q = [c as f64 + 0.5, r as f64 + 0.5];
                for (k, &fi) in list.iter().enumerate() {
                    dist[k] = signed_distance(face_uv(&uv, faces[fi as usize]), q);
                    surv[k] = if dist[k] > -CUTOFF * sharpness { survival(dist[k] / sharpness) } else { 1.0 };
                }
                suffix[list.len()] = 1.0;
                for k in (0..list.len()).rev() {
                    suffix[k] = suffix[k + 1] * surv[k];
                }
                let mut prefix = 1.0;
                for (k, &fi) in list.iter().enumerate() {
                    let others = prefix * suffix[k + 1];
                    prefix *= surv[k];
                    if dist[k] <= -CUTOFF * sharpness {
                        continue;
                    }
                    // d(1 - prod)/d d_k = others * s (1 - s) / sigma
                    let s = 1.0 - surv[k];
                    let w = g * others * s * surv[k] / sharpness;
                    if w == 0.0 {
                        continue;
                    }
                    let p = face_uv(&uv, faces[fi as usize]);
                    let pd: [[D; 2]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| D::var(p[i][j], 2 * i + j)));
                    let d = signed_distance(pd, q);
                    for (a, e) in acc[k].iter_mut().zip(&d.eps) {
                        *a += w * e;
                    }
                }
            }
            acc
        })
        .collect();
    let inv = 1.0 / camera.pixel_size();
    let mut out = vec![[0.0; 3]; x.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (&fi, a) in tiles.faces[t].iter().zip(acc) {
            for (i, &v) in faces[fi as usize].iter().enumerate() {
                out[v][0] += a[2 * i] * inv;
                out[v][1] -= a[2 * i + 1] * inv;
            }
        }
    }
    Ok(out)
}

/// Hard silhouette: 1 where the pixel center lies inside (or on) any
/// projected face.
pub fn render_binary(x: &[[f64; 3]], faces: &[[usize; 3]], camera: &CameraSpec) -> Result<SilhouetteImage> {
    check_inputs(x, faces, camera, 1.0)?;
    let n = camera.size;
    let uv: Vec<[f64; 2]> = x.iter().map(|p| camera.project(*p)).collect();
    let tiles = bin_faces(&uv, faces, n, 0.0);
    let blocks: Vec<Vec<(usize, usize)>> = (0..tiles.faces.len())
        .into_par_iter()
        .map(|t| {
            tiles
                .pixels(t, n)
                .filter(|&(c, r)| {
                    let q = [c as f64 + 0.5, r as f64 + 0.5];
                    tiles.faces[t].iter().any(|&fi| contains(face_uv(&uv, faces[fi as usize]), q))
                })
                .collect()
        })
        .collect();
    let mut img = SilhouetteImage::new(n, n);
    for (c, r) in blocks.into_iter().flatten() {
        img.set(c, r, 1.0);
    }
    Ok(img)
}

fn contains(p: [[f64; 2]; 3], q: [f64; 2]) -> bool {
    let area2 = cross2(sub2(p[1], p[0]), sub2(p[2], p[0]));
    if area2 == 0.0 {
        return false;
    }
    (0..3).all(|k| {
        let (a, b) = (p[k], p[(k + 1) % 3]);
        cross2(sub2(b, a), sub2(q, a)) * area2 >= 0.0
    })
}

fn to_gray8(img: &SilhouetteImage) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let px = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    ImageBuffer::from_raw(img.width as u32, img.height as u32, px).expect("buffer matches image size")
}

/// Writes an 8-bit grayscale PNG.
pub fn save_png(img: &SilhouetteImage, path: &Path) -> Result<()> {
    to_gray8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Writes a binary (P5) 8-bit PGM.
pub fn save_pgm(img: &SilhouetteImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    w.write_all(to_gray8(img).as_raw()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes PNG or PGM depending on the file extension.
pub fn save_image(img: &SilhouetteImage, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("png") => save_png(img, path),
        Some("pgm") | Some("pnm") => save_pgm(img, path),
        _ => Err(Error::Image(format!("{}: expected a .png or .pgm file", path.display()))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(format!("{}: {other}", path.display())),
    }
}

/// Reads a grayscale PNG or PGM into `[0, 1]`; color images are rejected.
pub fn load_image(path: &Path) -> Result<SilhouetteImage> {
    let format = match extension(path).as_deref() {
        Some("png") => image::ImageFormat::Png,
        Some("pgm") | Some("pnm") => image::ImageFormat::Pnm,
        _ => return Err(Error::Image(format!("{}: expected a .png or .pgm file", path.display()))),
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynamic = image::load_from_memory_with_format(&bytes, format).map_err(|e| image_error(path, e))?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = match dynamic {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::Image(format!(
                "{}: expected grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(SilhouetteImage { width, height, data })
}
