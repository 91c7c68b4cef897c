use std::f64::consts::PI;

use super::{Mesh, MeshTopology};
use crate::error::{Error, Result};
use crate::geometry::triangle_area;

const MIN_FACE_AREA: f64 = 1e-12;

/// Concentric-ring triangulation of a flat disk centered at the origin.
///
/// Ring `k` sits at radius `radius * k / R` with `R = ceil(radius / target)`
/// and carries roughly `circumference / target` vertices; neighbouring
/// rings are stitched by walking both rings in angle order. The result is
/// deterministic and every face is counter-clockwise seen from `+z`.
pub fn generate_disk_mesh(radius: f64, target_edge_length: f64) -> Result<Mesh> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("disk radius must be positive, got {radius}")));
    }
    // target == radius is accepted: it yields the coarsest mesh, a hexagon fan
    if !(target_edge_length > 0.0 && target_edge_length <= radius) {
        return Err(Error::invalid(format!(
            "target edge length must lie in (0, {radius}], got {target_edge_length}"
        )));
    }

    let rings = (radius / target_edge_length).ceil() as usize;
    let mut positions = vec![[0.0, 0.0, 0.0]];
    // (first vertex index, vertex count, angular offset) per ring
    let mut layout = Vec::with_capacity(rings);
    for k in 1..=rings {
        let r = radius * k as f64 / rings as f64;
        let n = ((2.0 * PI * r / target_edge_length).round() as usize).max(6);
        let offset = (k % 2) as f64 * PI / n as f64;
        layout.push((positions.len(), n, offset));
        for i in 0..n {
            let a = offset + 2.0 * PI * i as f64 / n as f64;
            positions.push([r * a.cos(), r * a.sin(), 0.0]);
        }
    }

    let mut faces = Vec::new();
    let (first, n, _) = layout[0];
    for j in 0..n {
        faces.push([0, first + j, first + (j + 1) % n]);
    }
    for w in layout.windows(2) {
        let (a0, na, oa) = w[0];
        let (b0, nb, ob) = w[1];
        let angle_a = |i: usize| oa + 2.0 * PI * i as f64 / na as f64;
        let angle_b = |j: usize| ob + 2.0 * PI * j as f64 / nb as f64;
        let (mut i, mut j) = (0, 0);
        while i < na || j < nb {
            let advance_inner = if i == na {
                false
            } else if j == nb {
                true
            } else {
                angle_a(i + 1) < angle_b(j + 1)
            };
            let (ai, bj) = (a0 + i % na, b0 + j % nb);
            if advance_inner {
                faces.push([ai, bj, a0 + (i + 1) % na]);
                i += 1;
            } else {
                faces.push([ai, bj, b0 + (j + 1) % nb]);
                j += 1;
            }
        }
    }

    for (fi, f) in faces.iter().enumerate() {
        let area = triangle_area(positions[f[0]], positions[f[1]], positions[f[2]]);
        if !(area >= MIN_FACE_AREA) {
            return Err(Error::DegenerateFace { face: fi, area });
        }
    }

    let topology = MeshTopology::from_faces(positions.len(), faces)?;
    Ok(Mesh {
        topology,
        positions,
    })
}
