//! Evaluation metrics and posterior comparison.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{CameraSpec, SilhouetteImage};

/// Number of 1-degree bins of a radius profile.
pub const PROFILE_BINS: usize = 360;

/// Mean squared pixel difference.
pub fn image_mse(a: &SilhouetteImage, b: &SilhouetteImage) -> Result<f64> {
    a.same_shape(b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data.len().max(1) as f64)
}

fn directed_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.par_iter()
        .map(|p| {
            b.iter()
                .map(|q| (0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance between two vertex sets (m).
pub fn hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Hausdorff distance of an empty point set".into()));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Outer boundary radius of a silhouette per 1-degree direction, measured
/// from the foreground centroid. Bin `k` covers directions within half a
/// degree of `k` degrees counterclockwise from `+x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub radii: Vec<f64>,
    /// Bins with no foreground pixel; their radius is 0.
    pub empty_bins: Vec<usize>,
}

impl RadiusProfile {
    pub fn mean(&self) -> f64 {
        self.radii.iter().sum::<f64>() / self.radii.len() as f64
    }
}

/// Bin of the integer offset `(dx, dy)` (world orientation, `+y` up). The
/// offset is first turned into the quadrant `dx > 0, dy >= 0` by exact
/// quarter turns, so the binning commutes with 90-degree rotations.
fn angle_bin(mut dx: i64, mut dy: i64) -> usize {
    let mut quadrant = 0;
    while !(dx > 0 && dy >= 0) {
        (dx, dy) = (dy, -dx);
        quadrant += 1;
    }
    let deg = (dy as f64).atan2(dx as f64).to_degrees().round() as usize;
    (quadrant * 90 + deg) % PROFILE_BINS
}

/// Radius-angle profile of a silhouette (foreground = pixels `>= 0.5`).
pub fn radius_angle(img: &SilhouetteImage, camera: &CameraSpec) -> Result<RadiusProfile> {
    let fg: Vec<(i64, i64)> = (0..img.height)
        .flat_map(|r| (0..img.width).map(move |c| (c, r)))
        .filter(|&(c, r)| img.get(c, r) >= 0.5)
        .map(|(c, r)| (2 * c as i64 + 1, 2 * r as i64 + 1))
        .collect();
    if fg.is_empty() {
        return Err(Error::Empty("radius profile of an empty silhouette".into()));
    }
    let n = fg.len() as i64;
    let (sc, sr) = fg.iter().fold((0i64, 0i64), |(a, b), (c, r)| (a + c, b + r));
    // offsets from the centroid, scaled by 2n to stay integral
    let mut radii = vec![0.0f64; PROFILE_BINS];
    let mut hit = vec![false; PROFILE_BINS];
    let scale = camera.pixel_size() / (2 * n) as f64;
    for &(c, r) in &fg {
        let dx = n * c - sc;
        let dy = sr - n * r;
        if dx == 0 && dy == 0 {
            continue;
        }
        let k = angle_bin(dx, dy);
        let rad = ((dx as f64).powi(2) + (dy as f64).powi(2)).sqrt() * scale;
        hit[k] = true;
        radii[k] = radii[k].max(rad);
    }
    let empty_bins: Vec<usize> = (0..PROFILE_BINS).filter(|&k| !hit[k]).collect();
    if !empty_bins.is_empty() {
        log::warn!("radius profile: {} of {PROFILE_BINS} directions hold no foreground pixel", empty_bins.len());
    }
    Ok(RadiusProfile { radii, empty_bins })
}

/// Writes `angle_deg,radius_m` rows.
pub fn write_profile_csv(profile: &RadiusProfile, path: &Path) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(["angle_deg", "radius_m"]).map_err(to_err)?;
    for (k, r) in profile.radii.iter().enumerate() {
        w.write_record([k.to_string(), format!("{r:.8e}")]).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Diagonal Gaussian over material parameter vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::LengthMismatch {
                expected: mean.len(),
                got: std.len(),
            });
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("standard deviations must be positive, got {s}")));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), x)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * ln2pi)
            .sum()
    }
}

/// A labelled posterior, one per fabric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosteriorSummary {
    pub label: String,
    pub gaussian: DiagGaussian,
}

/// `KL(P || Q)` of two diagonal Gaussians.
pub fn kl_diag_gauss(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::LengthMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut kl = 0.0;
    for d in 0..p.dim() {
        let (mp, sp, mq, sq) = (p.mean[d], p.std[d], q.mean[d], q.std[d]);
        kl += (sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// `log sum_k (1/K) N(tau | mu_k, sigma_k^2)` with uniform weights.
pub fn gmm_loglik(components: &[GaussianPosteriorSummary], tau: &[f64]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::Empty("mixture without components".into()));
    }
    for c in components {
        if c.gaussian.dim() != tau.len() {
            return Err(Error::LengthMismatch {
                expected: c.gaussian.dim(),
                got: tau.len(),
            });
        }
    }
    let logs: Vec<f64> = components.iter().map(|c| c.gaussian.log_density(tau)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    Ok(max + sum.ln() - (components.len() as f64).ln())
}

/// What to rank the components against.
#[derive(Clone, Copy, Debug)]
pub enum MaterialQuery<'a> {
    /// Point estimate, ranked by descending component log density.
    Point(&'a [f64]),
    /// Posterior, ranked by ascending `KL(P || component)`.
    Posterior(&'a DiagGaussian),
}

/// Component labels with their score, best first; ties go to the label
/// that sorts first.
pub fn nearest_material(components: &[GaussianPosteriorSummary], query: MaterialQuery) -> Result<Vec<(String, f64)>> {
    let mut ranked = Vec::with_capacity(components.len());
    for c in components {
        let score = match query {
            MaterialQuery::Point(tau) => {
                if tau.len() != c.gaussian.dim() {
                    return Err(Error::LengthMismatch {
                        expected: c.gaussian.dim(),
                        got: tau.len(),
                    });
                }
                c.gaussian.log_density(tau)
            }
            MaterialQuery::Posterior(p) => kl_diag_gauss(p, &c.gaussian)?,
        };
        ranked.push((c.label.clone(), score));
    }
    let descending = matches!(query, MaterialQuery::Point(_));
    ranked.sort_by(|a, b| {
        let ord = a.1.total_cmp(&b.1);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then_with(|| a.0.cmp(&b.0))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: &[f64], std: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), std.to_vec()).unwrap()
    }

    fn disk_image(cam: &CameraSpec, r: f64, squash: f64) -> SilhouetteImage {
        let mut img = SilhouetteImage::new(cam.size, cam.size);
        for row in 0..cam.size {
            for col in 0..cam.size {
                let p = cam.unproject([col as f64 + 0.5, row as f64 + 0.5]);
                if (p[0] / r).powi(2) + (p[1] / (r * squash)).powi(2) <= 1.0 {
                    img.set(col, row, 1.0);
                }
            }
        }
        img
    }

    #[test]
    fn mse_cases() {
        let ones = SilhouetteImage {
            width: 2,
            height: 2,
            data: vec![1.0; 4],
        };
        let zeros = SilhouetteImage::new(2, 2);
        assert_eq!(image_mse(&ones, &ones).unwrap(), 0.0);
        assert_eq!(image_mse(&ones, &zeros).unwrap(), 1.0);
        let checker = SilhouetteImage {
            data: vec![1.0, 0.0, 0.0, 1.0],
            ..zeros.clone()
        };
        let inverse = SilhouetteImage {
            data: vec![0.0, 1.0, 1.0, 0.0],
            ..zeros.clone()
        };
        assert_eq!(image_mse(&checker, &inverse).unwrap(), 1.0);
        assert!(image_mse(&ones, &SilhouetteImage::new(3, 2)).is_err());
    }

    #[test]
    fn hausdorff_cases() {
        let a = vec![[0.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(hausdorff(&a, &b).unwrap(), 2.0);
        assert_eq!(hausdorff(&b, &b).unwrap(), 0.0);
        assert!(hausdorff(&a, &[]).is_err());
    }

    #[test]
    fn disk_profile_is_flat() {
        let cam = CameraSpec::default();
        let p = radius_angle(&disk_image(&cam, 0.15, 1.0), &cam).unwrap();
        assert!(p.empty_bins.is_empty());
        for r in &p.radii {
            assert!((r - 0.15).abs() <= cam.pixel_size(), "{r}");
        }
    }

    #[test]
    fn ellipse_axes() {
        let cam = CameraSpec::default();
        let p = radius_angle(&disk_image(&cam, 0.15, 0.6), &cam).unwrap();
        assert!((p.radii[0] - 0.15).abs() <= cam.pixel_size());
        assert!((p.radii[90] - 0.09).abs() <= cam.pixel_size());
    }

    #[test]
    fn quarter_turn_shifts_profile() {
        let cam = CameraSpec {
            size: 96,
            ..CameraSpec::default()
        };
        let mut img = disk_image(&cam, 0.1, 0.7);
        // break the symmetry
        for r in 20..30 {
            for c in 50..80 {
                img.set(c, r, 1.0);
            }
        }
        let n = cam.size;
        let mut turned = SilhouetteImage::new(n, n);
        for r in 0..n {
            for c in 0..n {
                turned.set(r, n - 1 - c, img.get(c, r));
            }
        }
        let a = radius_angle(&img, &cam).unwrap();
        let b = radius_angle(&turned, &cam).unwrap();
        for k in 0..PROFILE_BINS {
            assert_eq!(a.radii[k], b.radii[(k + 90) % PROFILE_BINS], "bin {k}");
        }
    }

    #[test]
    fn empty_silhouette_is_an_error() {
        let cam = CameraSpec::default();
        assert!(radius_angle(&SilhouetteImage::new(256, 256), &cam).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert!((kl_diag_gauss(&g(&[0.0], &[1.0]), &g(&[1.0], &[1.0])).unwrap() - 0.5).abs() < 1e-12);
        let v = kl_diag_gauss(&g(&[0.0], &[2.0]), &g(&[0.0], &[1.0])).unwrap();
        assert!((v - (0.5f64.ln() + 2.0 - 0.5)).abs() < 1e-12);
        let p = g(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(kl_diag_gauss(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn gmm_cases() {
        let c = GaussianPosteriorSummary {
            label: "a".into(),
            gaussian: g(&[1.0, 2.0], &[0.5, 1.5]),
        };
        let at_mode = gmm_loglik(std::slice::from_ref(&c), &[1.0, 2.0]).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5f64.ln() - 1.5f64.ln();
        assert!((at_mode - expected).abs() < 1e-12);
        let three = vec![c.clone(), c.clone(), c.clone()];
        assert!((gmm_loglik(&three, &[0.2, 0.1]).unwrap() - gmm_loglik(&[c.clone()], &[0.2, 0.1]).unwrap()).abs() < 1e-12);
        let far = gmm_loglik(&three, &[1e150, -1e150]).unwrap();
        assert!(far.is_finite() && far < -1e290);
    }

    #[test]
    fn ranking_rules() {
        let comps = vec![
            GaussianPosteriorSummary {
                label: "b".into(),
                gaussian: g(&[1.0], &[1.0]),
            },
            GaussianPosteriorSummary {
                label: "a".into(),
                gaussian: g(&[-1.0], &[1.0]),
            },
        ];
        let p = g(&[0.0], &[1.0]);
        let r = nearest_material(&comps, MaterialQuery::Posterior(&p)).unwrap();
        assert_eq!(r[0].0, "a");
        let same = comps[0].gaussian.clone();
        let r = nearest_material(&comps, MaterialQuery::Posterior(&same)).unwrap();
        assert_eq!((r[0].0.as_str(), r[0].1), ("b", 0.0));
        let r = nearest_material(&comps, MaterialQuery::Point(&[0.9])).unwrap();
        assert_eq!(r[0].0, "b");
    }

    #[test]
    fn profile_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = RadiusProfile {
            radii: vec![0.1; PROFILE_BINS],
            empty_bins: vec![],
        };
        write_profile_csv(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("angle_deg,radius_m\n0,1.00000000e-1\n"));
        assert_eq!(text.lines().count(), PROFILE_BINS + 1);
    }
}
