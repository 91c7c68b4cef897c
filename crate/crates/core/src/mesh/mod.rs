//! Disk meshes, their connectivity, and the rest-state quantities the force
//! models read.

mod disk;
mod obj;
mod rest;

use std::collections::BTreeMap;

pub use disk::generate_disk_mesh;
pub use obj::{load_obj, parse_obj, save_obj, to_obj_string};
pub use rest::{compute_rest_state, pin_support_region, HingeRest, Pin, RestState};

use crate::error::{Error, Result};

/// An interior edge shared by exactly two faces.
///
/// The first face lists the edge as `edge[0] -> edge[1]` in its winding
/// order with `opposite[0]` as third vertex; the second face lists it as
/// `edge[1] -> edge[0]` with `opposite[1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hinge {
    pub edge: [usize; 2],
    pub opposite: [usize; 2],
    pub faces: [usize; 2],
}

impl Hinge {
    /// Vertex order used by the bending kernel: edge, then the two wings.
    pub fn vertices(&self) -> [usize; 4] {
        [self.edge[0], self.edge[1], self.opposite[0], self.opposite[1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshTopology {
    pub vertex_count: usize,
    pub faces: Vec<[usize; 3]>,
    /// Unique undirected edges, `edge[0] < edge[1]`, sorted.
    pub edges: Vec<[usize; 2]>,
    pub hinges: Vec<Hinge>,
}

impl MeshTopology {
    /// Builds edges and hinges from consistently oriented triangles.
    pub fn from_faces(vertex_count: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_faces: BTreeMap<[usize; 2], Vec<(usize, bool)>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertex_count) {
                return Err(Error::invalid(format!(
                    "face {fi} references a vertex outside 0..{vertex_count}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace { face: fi, area: 0.0 });
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                edge_faces.entry(key).or_default().push((fi, a < b));
            }
        }

        let mut edges = Vec::with_capacity(edge_faces.len());
        let mut hinges = Vec::new();
        for (key, adj) in &edge_faces {
            edges.push(*key);
            match adj.as_slice() {
                [_] => {}
                [(f0, fwd0), (f1, fwd1)] => {
                    if fwd0 == fwd1 {
                        // both faces traverse the edge the same way
                        return Err(Error::NonManifold(key[0], key[1]));
                    }
                    let (fa, fb) = if *fwd0 { (*f0, *f1) } else { (*f1, *f0) };
                    let third = |f: usize| {
                        faces[f]
                            .iter()
                            .copied()
                            .find(|v| *v != key[0] && *v != key[1])
                            .expect("triangle has a third vertex")
                    };
                    hinges.push(Hinge {
                        edge: *key,
                        opposite: [third(fa), third(fb)],
                        faces: [fa, fb],
                    });
                }
                _ => return Err(Error::NonManifold(key[0], key[1])),
            }
        }

        Ok(Self {
            vertex_count,
            faces,
            edges,
            hinges,
        })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn hinge_count(&self) -> usize {
        self.hinges.len()
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.len() - self.hinges.len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }
}

/// Connectivity plus vertex positions in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub topology: MeshTopology,
    pub positions: Vec<[f64; 3]>,
}

/// Everything the simulator needs about one cloth sample.
#[derive(Clone, Debug)]
pub struct MeshAssets {
    pub topology: MeshTopology,
    pub rest: RestState,
}

impl MeshAssets {
    /// Rest state with density `density` and the center region within
    /// `pin_radius` pinned to its rest positions.
    pub fn build(mesh: &Mesh, density: f64, pin_radius: f64) -> Result<Self> {
        let mut rest = compute_rest_state(&mesh.topology, &mesh.positions, density)?;
        rest.pins = pin_support_region(&rest, pin_radius)?;
        Ok(Self {
            topology: mesh.topology.clone(),
            rest,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.topology.vertex_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> MeshTopology {
        MeshTopology::from_faces(4, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
    }

    #[test]
    fn quad_has_one_hinge() {
        let t = quad();
        assert_eq!(t.edges.len(), 5);
        assert_eq!(t.hinge_count(), 1);
        assert_eq!(t.boundary_edge_count(), 4);
        assert_eq!(t.euler_characteristic(), 1);
        let h = &t.hinges[0];
        assert_eq!(h.edge, [0, 2]);
        // (0, 2, 3) runs 0 -> 2, (0, 1, 2) runs 2 -> 0
        assert_eq!(h.faces, [1, 0]);
        assert_eq!(h.opposite, [3, 1]);
    }

    #[test]
    fn hinge_faces_share_exactly_the_edge() {
        let t = quad();
        for h in &t.hinges {
            for (k, &f) in h.faces.iter().enumerate() {
                let face = t.faces[f];
                assert!(face.contains(&h.edge[0]) && face.contains(&h.edge[1]));
                assert!(face.contains(&h.opposite[k]));
            }
        }
    }

    #[test]
    fn rejects_non_manifold_edges() {
        let err = MeshTopology::from_faces(5, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]);
        assert!(matches!(err, Err(Error::NonManifold(0, 1))));
    }

    #[test]
    fn rejects_inconsistent_orientation() {
        let err = MeshTopology::from_faces(4, vec![[0, 1, 2], [0, 1, 3]]);
        assert!(matches!(err, Err(Error::NonManifold(0, 1))));
    }

    #[test]
    fn rejects_out_of_range_vertices() {
        assert!(MeshTopology::from_faces(3, vec![[0, 1, 3]]).is_err());
    }
}
