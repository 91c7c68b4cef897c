use super::MeshTopology;
use crate::error::{Error, Result};
use crate::geometry::{dihedral_angle, triangle_area};

const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HingeRest {
    /// Interior dihedral angle, `pi` when flat.
    pub rest_dihedral: f64,
    pub edge_length: f64,
    /// Heights of the two wing vertices over the hinge edge.
    pub heights: [f64; 2],
    /// Angle between the edge and the warp axis, in `[0, pi/2]`.
    pub bias_angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pin {
    pub vertex: usize,
    pub anchor: [f64; 3],
}

/// Rest-state quantities of a cloth sample.
///
/// Material coordinates are the flat sample's `(x, y)`: the warp axis is
/// `+x` and the weft axis `+y`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestState {
    pub positions: Vec<[f64; 3]>,
    pub density: f64,
    pub face_areas: Vec<f64>,
    /// Inverse of `[X1 - X0, X2 - X0]` in material coordinates, row-major.
    pub face_frames: Vec<[[f64; 2]; 2]>,
    pub masses: Vec<f64>,
    pub hinges: Vec<HingeRest>,
    pub pins: Vec<Pin>,
}

impl RestState {
    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

pub fn compute_rest_state(
    topology: &MeshTopology,
    positions: &[[f64; 3]],
    density: f64,
) -> Result<RestState> {
    if positions.len() != topology.vertex_count {
        return Err(Error::LengthMismatch {
            expected: topology.vertex_count,
            got: positions.len(),
        });
    }
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::invalid(format!("area density must be positive, got {density}")));
    }

    let mut face_areas = Vec::with_capacity(topology.faces.len());
    let mut face_frames = Vec::with_capacity(topology.faces.len());
    let mut masses = vec![0.0; topology.vertex_count];
    for (fi, f) in topology.faces.iter().enumerate() {
        let [p0, p1, p2] = f.map(|v| positions[v]);
        let area = triangle_area(p0, p1, p2);
        let (a, c) = (p1[0] - p0[0], p1[1] - p0[1]);
        let (b, d) = (p2[0] - p0[0], p2[1] - p0[1]);
        let det = a * d - b * c;
        if !(area > MIN_FACE_AREA) || !(0.5 * det.abs() > MIN_FACE_AREA) {
            return Err(Error::DegenerateFace { face: fi, area });
        }
        face_areas.push(area);
        face_frames.push([[d / det, -b / det], [-c / det, a / det]]);
        for &v in f {
            masses[v] += density * area / 3.0;
        }
    }
    if let Some(v) = masses.iter().position(|m| *m <= 0.0) {
        return Err(Error::invalid(format!("vertex {v} belongs to no face")));
    }

    let hinges = topology
        .hinges
        .iter()
        .map(|h| {
            let [e0, e1, o0, o1] = h.vertices().map(|v| positions[v]);
            let dx = e1[0] - e0[0];
            let dy = e1[1] - e0[1];
            let dz = e1[2] - e0[2];
            let len = (dx * dx + dy * dy + dz * dz).sqrt();
            HingeRest {
                rest_dihedral: dihedral_angle(e0, e1, o0, o1),
                edge_length: len,
                heights: [
                    2.0 * face_areas[h.faces[0]] / len,
                    2.0 * face_areas[h.faces[1]] / len,
                ],
                bias_angle: dy.abs().atan2(dx.abs()),
            }
        })
        .collect();

    Ok(RestState {
        positions: positions.to_vec(),
        density,
        face_areas,
        face_frames,
        masses,
        hinges,
        pins: Vec::new(),
    })
}

/// Pins every vertex whose in-plane distance to the disk center is below
/// `pin_radius`, anchored at its rest position.
pub fn pin_support_region(rest: &RestState, pin_radius: f64) -> Result<Vec<Pin>> {
    if !(pin_radius > 0.0) {
        return Err(Error::invalid(format!("pin radius must be positive, got {pin_radius}")));
    }
    let pins: Vec<Pin> = rest
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| (p[0] * p[0] + p[1] * p[1]).sqrt() < pin_radius)
        .map(|(vertex, p)| Pin { vertex, anchor: *p })
        .collect();
    if pins.is_empty() {
        return Err(Error::Empty(format!(
            "no vertex lies within pin radius {pin_radius} m of the center"
        )));
    }
    Ok(pins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_disk_mesh;
    use std::f64::consts::PI;

    #[test]
    fn equilateral_triangle_masses() {
        let s3 = 3f64.sqrt();
        let t = MeshTopology::from_faces(3, vec![[0, 1, 2]]).unwrap();
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, s3 / 2.0, 0.0]];
        let r = compute_rest_state(&t, &p, 1.0).unwrap();
        for m in &r.masses {
            assert!((m - s3 / 4.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn frame_maps_rest_edges_to_material_axes() {
        let t = MeshTopology::from_faces(3, vec![[0, 1, 2]]).unwrap();
        let p = [[0.1, 0.2, 0.0], [0.4, 0.25, 0.0], [0.05, 0.6, 0.0]];
        let r = compute_rest_state(&t, &p, 1.0).unwrap();
        let dm = r.face_frames[0];
        let cols = [[0.3, 0.05], [-0.05, 0.4]];
        // [X1-X0, X2-X0] * Dm^-1 = I
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| cols[k][i] * dm[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_quad_has_pi_rest_dihedral() {
        let t = MeshTopology::from_faces(4, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let r = compute_rest_state(&t, &p, 1.0).unwrap();
        assert!((r.hinges[0].rest_dihedral - PI).abs() < 1e-12);
        assert!((r.hinges[0].bias_angle - PI / 4.0).abs() < 1e-12);
        assert!((r.hinges[0].heights[0] - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fabric_one_total_mass() {
        let m = generate_disk_mesh(0.15, 0.02).unwrap();
        let r = compute_rest_state(&m.topology, &m.positions, 0.059).unwrap();
        let expect = 0.059 * r.total_area();
        assert!((r.total_mass() - expect).abs() <= 1e-12 * expect);
        // inscribed polygon: close to the circle's area
        assert!((r.total_mass() - 0.059 * PI * 0.0225).abs() < 0.01 * 0.059 * PI * 0.0225);
    }

    #[test]
    fn pin_region_fraction_tracks_area_ratio() {
        let m = generate_disk_mesh(0.15, 0.008).unwrap();
        let r = compute_rest_state(&m.topology, &m.positions, 0.1).unwrap();
        let pins = pin_support_region(&r, 0.09).unwrap();
        let frac = pins.len() as f64 / m.topology.vertex_count as f64;
        assert!((frac - 0.36).abs() < 0.03, "{frac}");
        for p in &pins {
            assert_eq!(p.anchor, m.positions[p.vertex]);
        }
    }

    #[test]
    fn pin_region_extremes() {
        let m = generate_disk_mesh(0.15, 0.03).unwrap();
        let r = compute_rest_state(&m.topology, &m.positions, 0.1).unwrap();
        assert_eq!(pin_support_region(&r, 0.15 + 1e-9).unwrap().len(), m.topology.vertex_count);
        let only_center = pin_support_region(&r, 0.01).unwrap();
        assert_eq!(only_center.len(), 1);
        assert_eq!(only_center[0].vertex, 0);
    }

    #[test]
    fn rejects_degenerate_faces_and_bad_density() {
        let t = MeshTopology::from_faces(3, vec![[0, 1, 2]]).unwrap();
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            compute_rest_state(&t, &p, 1.0),
            Err(Error::DegenerateFace { face: 0, .. })
        ));
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(compute_rest_state(&t, &p, 0.0).is_err());
    }
}
