//! Block-sparse assembly of the implicit-Euler system
//! `A = M (1 + h c_d) - h^2 J`, `b = h (F + h J v)`.

use std::sync::Arc;

use rayon::prelude::*;

use super::bend::bend_forces;
use super::external::handle_force;
use super::solver::{CscMatrix, CscPattern};
use super::stretch::stretch_forces;
use crate::autodiff::Dual;
use crate::error::{Error, Result};
use crate::geometry::triangle_area;
use crate::material::{lift_bend, lift_stretch, BendStiffness, MaterialField, StretchStiffness};
use crate::mesh::{HingeRest, MeshTopology, RestState};

const MIN_FACE_AREA: f64 = 1e-12;

/// Location of a 3x3 block in the value array: entry `(r, c)` lives at
/// `start + c * stride + r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSlot {
    pub start: usize,
    pub stride: usize,
}

impl BlockSlot {
    #[inline(always)]
    pub fn at(&self, r: usize, c: usize) -> usize {
        self.start + c * self.stride + r
    }
}

/// Sparsity pattern of `A` for one mesh plus the block slots of every
/// element, so assembly is a plain scatter.
#[derive(Debug)]
pub struct SystemLayout {
    pub pattern: Arc<CscPattern>,
    /// `face_slots[f][i * 3 + k]` is block (vertex i, vertex k) of face f.
    pub face_slots: Vec<[BlockSlot; 9]>,
    pub hinge_slots: Vec<[BlockSlot; 16]>,
    pub diag_slots: Vec<BlockSlot>,
}

impl SystemLayout {
    /// Vertices are coupled when they share a face or a hinge.
    pub fn new(topology: &MeshTopology) -> Result<Self> {
        let nv = topology.vertex_count;
        let mut nb: Vec<Vec<usize>> = (0..nv).map(|v| vec![v]).collect();
        let mut link = |vs: &[usize]| {
            for &a in vs {
                for &b in vs {
                    nb[b].push(a);
                }
            }
        };
        for f in &topology.faces {
            link(f);
        }
        for h in &topology.hinges {
            link(&h.vertices());
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }

        let n = 3 * nv;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for list in &nb {
            for _ in 0..3 {
                for &i in list {
                    row_idx.extend([3 * i, 3 * i + 1, 3 * i + 2]);
                }
                col_ptr.push(row_idx.len());
            }
        }
        let slot = |i: usize, j: usize| {
            let pos = nb[j].binary_search(&i).expect("coupled vertices share a block");
            BlockSlot {
                start: col_ptr[3 * j] + 3 * pos,
                stride: 3 * nb[j].len(),
            }
        };
        let face_slots = topology
            .faces
            .iter()
            .map(|f| std::array::from_fn(|ik| slot(f[ik / 3], f[ik % 3])))
            .collect();
        let hinge_slots = topology
            .hinges
            .iter()
            .map(|h| {
                let v = h.vertices();
                std::array::from_fn(|ik| slot(v[ik / 4], v[ik % 4]))
            })
            .collect();
        let diag_slots = (0..nv).map(|v| slot(v, v)).collect();
        let pattern = CscPattern::new(n, col_ptr, row_idx)?;
        Ok(Self {
            pattern,
            face_slots,
            hinge_slots,
            diag_slots,
        })
    }
}

/// Knobs of the time integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    /// Time step (s).
    pub h: f64,
    pub steps: usize,
    /// Handle spring stiffness (N/m).
    pub handle_stiffness: f64,
    /// Mass-proportional damping coefficient (1/s).
    pub damping: f64,
    pub gravity: [f64; 3],
    /// Use the exact force Jacobian in `A` instead of the filtered one that
    /// drops compressive geometric stiffness and bending curvature terms.
    pub exact_jacobian: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            h: 0.05,
            steps: 100,
            handle_stiffness: super::external::DEFAULT_HANDLE_STIFFNESS,
            damping: 0.0,
            gravity: super::external::GRAVITY,
            exact_jacobian: false,
        }
    }
}

#[inline(always)]
pub fn gather<const K: usize>(x: &[[f64; 3]], idx: [usize; K]) -> [[f64; 3]; K] {
    idx.map(|v| x[v])
}

pub(crate) fn check_face(x: &[[f64; 3]], f: [usize; 3], face: usize) -> Result<()> {
    let area = triangle_area(x[f[0]], x[f[1]], x[f[2]]);
    if !(area > MIN_FACE_AREA) {
        return Err(Error::DegenerateFace { face, area });
    }
    Ok(())
}

/// Stretching forces of one face and their 9x9 position Jacobian.
pub fn stretch_element(
    xs: [[f64; 3]; 3],
    dm: &[[f64; 2]; 2],
    area: f64,
    table: &StretchStiffness,
    exact: bool,
) -> ([[f64; 3]; 3], [[f64; 9]; 9]) {
    type D = Dual<f64, 9>;
    let xd: [[D; 3]; 3] = std::array::from_fn(|k| std::array::from_fn(|c| D::var(xs[k][c], 3 * k + c)));
    let f = stretch_forces(&xd, dm, area, &lift_stretch::<D>(table), !exact);
    let forces = f.map(|v| v.map(|d| d.re));
    let jac = std::array::from_fn(|i| f[i / 3][i % 3].eps);
    (forces, jac)
}

/// Bending forces of one hinge and their 12x12 position Jacobian.
pub fn bend_element(
    xs: [[f64; 3]; 4],
    rest: &HingeRest,
    table: &BendStiffness,
    exact: bool,
) -> ([[f64; 3]; 4], [[f64; 12]; 12]) {
    type D = Dual<f64, 12>;
    let xd: [[D; 3]; 4] = std::array::from_fn(|k| std::array::from_fn(|c| D::var(xs[k][c], 3 * k + c)));
    let f = bend_forces(&xd, rest, &lift_bend::<D>(table), !exact);
    let forces = f.map(|v| v.map(|d| d.re));
    let jac = std::array::from_fn(|i| f[i / 3][i % 3].eps);
    (forces, jac)
}

/// Sum of stretching and bending forces at positions `x`.
pub fn internal_forces(
    topology: &MeshTopology,
    rest: &RestState,
    material: &MaterialField,
    x: &[[f64; 3]],
) -> Vec<[f64; 3]> {
    let mut f = vec![[0.0; 3]; x.len()];
    for (fi, face) in topology.faces.iter().enumerate() {
        let xs = gather(x, *face);
        let local = stretch_forces(&xs, &rest.face_frames[fi], rest.face_areas[fi], &lift_stretch(material.stretch(fi)), false);
        for (k, &v) in face.iter().enumerate() {
            for c in 0..3 {
                f[v][c] += local[k][c];
            }
        }
    }
    for (hi, h) in topology.hinges.iter().enumerate() {
        let v = h.vertices();
        let local = bend_forces(&gather(x, v), &rest.hinges[hi], &lift_bend(material.bend(hi)), false);
        for (k, &vi) in v.iter().enumerate() {
            for c in 0..3 {
                f[vi][c] += local[k][c];
            }
        }
    }
    f
}

/// Assembled implicit-Euler system at one state.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub a: CscMatrix,
    pub b: Vec<f64>,
    /// Total force at the state, N per vertex.
    pub forces: Vec<[f64; 3]>,
}

/// Builds `A` and `b` at state `(x, v)`.
///
/// Element forces and Jacobians are evaluated in parallel and scattered in
/// element order, so the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn assemble_system(
    layout: &SystemLayout,
    topology: &MeshTopology,
    rest: &RestState,
    material: &MaterialField,
    params: &SimParams,
    x: &[[f64; 3]],
    v: &[[f64; 3]],
) -> Result<AssembledSystem> {
    let nv = topology.vertex_count;
    if x.len() != nv || v.len() != nv {
        return Err(Error::LengthMismatch {
            expected: nv,
            got: x.len().min(v.len()),
        });
    }
    material.check_sizes(topology.face_count(), topology.hinge_count())?;
    let h = params.h;
    if !(h > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {h}")));
    }

    let faces: Vec<_> = topology
        .faces
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            check_face(x, *f, fi)?;
            Ok(stretch_element(
                gather(x, *f),
                &rest.face_frames[fi],
                rest.face_areas[fi],
                material.stretch(fi),
                params.exact_jacobian,
            ))
        })
        .collect::<Result<_>>()?;
    let hinges: Vec<_> = topology
        .hinges
        .par_iter()
        .enumerate()
        .map(|(hi, hg)| bend_element(gather(x, hg.vertices()), &rest.hinges[hi], material.bend(hi), params.exact_jacobian))
        .collect();

    let mut a = CscMatrix::zeros(layout.pattern.clone());
    let mut forces = super::external::gravity_force(&rest.masses, params.gravity);
    let mut jv = vec![[0.0; 3]; nv];
    let h2 = h * h;

    for (vi, m) in rest.masses.iter().enumerate() {
        let s = layout.diag_slots[vi];
        for c in 0..3 {
            a.values[s.at(c, c)] += m * (1.0 + h * params.damping);
            forces[vi][c] -= params.damping * m * v[vi][c];
        }
    }
    let handle = handle_force(x, &rest.pins, params.handle_stiffness);
    for p in &rest.pins {
        let s = layout.diag_slots[p.vertex];
        for c in 0..3 {
            forces[p.vertex][c] += handle[p.vertex][c];
            jv[p.vertex][c] -= params.handle_stiffness * v[p.vertex][c];
            a.values[s.at(c, c)] += h2 * params.handle_stiffness;
        }
    }

    fn scatter<const K: usize, const N: usize>(
        idx: [usize; K],
        f: &[[f64; 3]; K],
        jac: &[[f64; N]; N],
        slots: &[BlockSlot],
        v: &[[f64; 3]],
        h2: f64,
        values: &mut [f64],
        forces: &mut [[f64; 3]],
        jv: &mut [[f64; 3]],
    ) {
        let vl: [f64; N] = std::array::from_fn(|j| v[idx[j / 3]][j % 3]);
        for i in 0..K {
            for r in 0..3 {
                let row = &jac[3 * i + r];
                forces[idx[i]][r] += f[i][r];
                jv[idx[i]][r] += row.iter().zip(&vl).map(|(a, b)| a * b).sum::<f64>();
                for k in 0..K {
                    let s = slots[i * K + k];
                    for c in 0..3 {
                        values[s.at(r, c)] -= h2 * row[3 * k + c];
                    }
                }
            }
        }
    }

    for (fi, (f, jac)) in faces.iter().enumerate() {
        let idx = topology.faces[fi];
        scatter(idx, f, jac, &layout.face_slots[fi], v, h2, &mut a.values, &mut forces, &mut jv);
    }
    for (hi, (f, jac)) in hinges.iter().enumerate() {
        let idx = topology.hinges[hi].vertices();
        scatter(idx, f, jac, &layout.hinge_slots[hi], v, h2, &mut a.values, &mut forces, &mut jv);
    }

    let mut b = vec![0.0; 3 * nv];
    for vi in 0..nv {
        for c in 0..3 {
            b[3 * vi + c] = h * (forces[vi][c] + h * jv[vi][c]);
        }
    }
    Ok(AssembledSystem { a, b, forces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Material;
    use crate::mesh::{generate_disk_mesh, MeshAssets};

    #[test]
    fn pattern_holds_every_element_block() {
        let m = generate_disk_mesh(0.1, 0.04).unwrap();
        let layout = SystemLayout::new(&m.topology).unwrap();
        for h in &m.topology.hinges {
            let [_, _, o0, o1] = h.vertices();
            assert!(layout.pattern.index(3 * o0, 3 * o1 + 2).is_some());
        }
        let p = &layout.pattern;
        let s = layout.face_slots[3][1];
        let f = m.topology.faces[3];
        assert_eq!(p.index(3 * f[0] + 2, 3 * f[1] + 1), Some(s.at(2, 1)));
    }

    #[test]
    fn small_step_limit() {
        let mesh = generate_disk_mesh(0.1, 0.04).unwrap();
        let assets = MeshAssets::build(&mesh, 0.1, 0.03).unwrap();
        let layout = SystemLayout::new(&assets.topology).unwrap();
        let mat = MaterialField::Homogeneous(Material::uniform(50.0, 0.3, 1e-4));
        let v = vec![[0.01, -0.02, 0.03]; mesh.positions.len()];
        let params = SimParams {
            h: 1e-9,
            ..SimParams::default()
        };
        let sys = assemble_system(&layout, &assets.topology, &assets.rest, &mat, &params, &mesh.positions, &v).unwrap();
        for (vi, m) in assets.rest.masses.iter().enumerate() {
            assert!((sys.a.get(3 * vi, 3 * vi) - m).abs() < 1e-9 * m);
        }
        assert!(sys.b.iter().all(|b| b.abs() < 1e-8));
    }
}
