//! Reverse sweep through recorded implicit-Euler steps.
//!
//! A step solves `A v' = M v + h F(x)` (the assembled `A dv = b` rearranged),
//! then sets `x' = x + h v'`. With `g = A^-T (gv' + h gx')` the step adjoint is
//! `gv = M g` and `gx = gx' + d/dx [h g.F + h^2 g.(J v')]`, where `J` is the
//! Jacobian used in `A` and `v'` is held fixed. The same scalar differentiated
//! by the material tables gives the parameter gradient. Both derivatives come
//! from element kernels evaluated on nested dual numbers.

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Dual, Real};
use crate::dynamics::{
    bend_forces, bend_query, gather, stiffness_query, stretch_forces, SimTape, Simulator, SparseLu, TapeRecord,
};
use crate::error::{Error, Result};
use crate::material::{
    bend_support, lift_bend, lift_stretch, stretch_support, BendStiffness, MaterialField, StretchStiffness,
    BEND_COLS, STRETCH_COLS,
};
use crate::mesh::HingeRest;

/// Local directions of a face: 9 position components and the 16 table
/// entries its stiffness lookup blends.
const FACE_DIRS: usize = 9 + 16;
/// Local directions of a hinge: 12 positions and 4 table entries.
const HINGE_DIRS: usize = 12 + 4;

type Nested<const M: usize> = Dual<Dual<f64, M>, 1>;

/// Gradients of a scalar loss with respect to the simulation inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientBundle {
    /// Layout of [`MaterialField::flatten`].
    pub material: Vec<f64>,
    pub x0: Vec<[f64; 3]>,
    pub v0: Vec<[f64; 3]>,
    /// Handle anchor positions, in pin order.
    pub anchors: Vec<[f64; 3]>,
}

#[inline(always)]
fn seed_positions<const K: usize, const M: usize>(x: [[f64; 3]; K], v: [[f64; 3]; K]) -> [[Nested<M>; 3]; K] {
    std::array::from_fn(|k| {
        std::array::from_fn(|c| Nested::with_tangent(Dual::var(x[k][c], 3 * k + c), Dual::cst(v[k][c])))
    })
}

/// `d/d(local dirs)` of `g . (h f + h^2 D_v f)`.
#[inline(always)]
fn contract<const K: usize, const M: usize>(f: &[[Nested<M>; 3]; K], g: &[[f64; 3]; K], h: f64) -> [f64; M] {
    let mut out = [0.0; M];
    for k in 0..K {
        for c in 0..3 {
            let fc = &f[k][c];
            let w = g[k][c];
            if w == 0.0 {
                continue;
            }
            for (o, (a, b)) in out.iter_mut().zip(fc.re.eps.iter().zip(&fc.eps[0].eps)) {
                *o += w * (h * a + h * h * b);
            }
        }
    }
    out
}

/// Face contribution: position gradient and `(flat index, value)` pairs
/// relative to the face's table offset.
fn stretch_vjp(
    x: [[f64; 3]; 3],
    v: [[f64; 3]; 3],
    g: [[f64; 3]; 3],
    dm: &[[f64; 2]; 2],
    area: f64,
    table: &StretchStiffness,
    h: f64,
    filtered: bool,
) -> ([[f64; 3]; 3], [(usize, f64); 16]) {
    let (lambda_max, phi) = stiffness_query(x, dm);
    let rows = stretch_support(lambda_max, phi);
    let mut t = lift_stretch::<Nested<FACE_DIRS>>(table);
    for (a, &r) in rows.iter().enumerate() {
        for col in 0..STRETCH_COLS {
            t[r][col] = Nested::cst(0.0);
            t[r][col].re = Dual::var(table.0[r][col], 9 + 4 * a + col);
        }
    }
    let f = stretch_forces(&seed_positions(x, v), dm, area, &t, filtered);
    let d = contract(&f, &g, h);
    let gx = std::array::from_fn(|k| std::array::from_fn(|c| d[3 * k + c]));
    let gp = std::array::from_fn(|i| {
        let (a, col) = (i / 4, i % 4);
        (rows[a] * STRETCH_COLS + col, d[9 + i])
    });
    (gx, gp)
}

fn bend_vjp(
    x: [[f64; 3]; 4],
    v: [[f64; 3]; 4],
    g: [[f64; 3]; 4],
    rest: &HingeRest,
    table: &BendStiffness,
    h: f64,
    filtered: bool,
) -> ([[f64; 3]; 4], [(usize, f64); 4]) {
    let cells = bend_support(bend_query(x, rest), rest.bias_angle);
    let mut t = lift_bend::<Nested<HINGE_DIRS>>(table);
    for (a, &(r, k)) in cells.iter().enumerate() {
        t[r][k] = Nested::cst(0.0);
        t[r][k].re = Dual::var(table.0[r][k], 12 + a);
    }
    let f = bend_forces(&seed_positions(x, v), rest, &t, filtered);
    let d = contract(&f, &g, h);
    let gx = std::array::from_fn(|k| std::array::from_fn(|c| d[3 * k + c]));
    let gp = std::array::from_fn(|a| (cells[a].0 * BEND_COLS + cells[a].1, d[12 + a]));
    (gx, gp)
}

fn check_record(record: &TapeRecord, nv: usize, nnz: usize) -> Result<()> {
    let sizes = [
        (record.x.len(), nv),
        (record.v.len(), nv),
        (record.dv.len(), 3 * nv),
        (record.b.len(), 3 * nv),
        (record.a_values.len(), nnz),
    ];
    for (got, expected) in sizes {
        if got != expected {
            return Err(Error::LengthMismatch { expected, got });
        }
    }
    Ok(())
}

/// Pulls `(dL/dx', dL/dv')` of the state after `record` back to the state
/// it started from. Material and anchor gradients are accumulated into
/// `grad_material` and `grad_anchors`.
#[allow(clippy::too_many_arguments)]
pub fn backward_step(
    sim: &Simulator,
    material: &MaterialField,
    record: &TapeRecord,
    gx_next: &[[f64; 3]],
    gv_next: &[[f64; 3]],
    grad_material: &mut [f64],
    grad_anchors: &mut [[f64; 3]],
) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let topo = &*sim.topology;
    let rest = &*sim.rest;
    let nv = topo.vertex_count;
    check_record(record, nv, sim.layout.pattern.nnz())?;
    for (len, expected) in [
        (gx_next.len(), nv),
        (gv_next.len(), nv),
        (grad_material.len(), material.parameter_count()),
        (grad_anchors.len(), rest.pins.len()),
    ] {
        if len != expected {
            return Err(Error::LengthMismatch { expected, got: len });
        }
    }
    let h = sim.params.h;

    let mut rhs = vec![0.0; 3 * nv];
    for i in 0..nv {
        for c in 0..3 {
            rhs[3 * i + c] = gv_next[i][c] + h * gx_next[i][c];
        }
    }
    if rhs.iter().all(|r| *r == 0.0) {
        return Ok((vec![[0.0; 3]; nv], vec![[0.0; 3]; nv]));
    }
    let a = sim.matrix(record.a_values.clone());
    let gb = SparseLu::new(&a).solve_transpose(&rhs)?;
    let gb3 = |i: usize| [gb[3 * i], gb[3 * i + 1], gb[3 * i + 2]];

    let v_next: Vec<[f64; 3]> = (0..nv)
        .map(|i| std::array::from_fn(|c| record.v[i][c] + record.dv[3 * i + c]))
        .collect();
    let filtered = !sim.params.exact_jacobian;

    let gv_prev: Vec<[f64; 3]> = (0..nv).map(|i| gb3(i).map(|g| rest.masses[i] * g)).collect();
    let mut gx_prev = gx_next.to_vec();

    let faces: Vec<_> = topo
        .faces
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            stretch_vjp(
                gather(&record.x, *f),
                gather(&v_next, *f),
                f.map(gb3),
                &rest.face_frames[fi],
                rest.face_areas[fi],
                material.stretch(fi),
                h,
                filtered,
            )
        })
        .collect();
    let hinges: Vec<_> = topo
        .hinges
        .par_iter()
        .enumerate()
        .map(|(hi, hg)| {
            let vs = hg.vertices();
            bend_vjp(
                gather(&record.x, vs),
                gather(&v_next, vs),
                vs.map(gb3),
                &rest.hinges[hi],
                material.bend(hi),
                h,
                filtered,
            )
        })
        .collect();

    for (fi, (gx, gp)) in faces.iter().enumerate() {
        for (k, &vi) in topo.faces[fi].iter().enumerate() {
            for c in 0..3 {
                gx_prev[vi][c] += gx[k][c];
            }
        }
        let off = material.stretch_offset(fi);
        for &(i, g) in gp {
            grad_material[off + i] += g;
        }
    }
    for (hi, (gx, gp)) in hinges.iter().enumerate() {
        for (k, &vi) in topo.hinges[hi].vertices().iter().enumerate() {
            for c in 0..3 {
                gx_prev[vi][c] += gx[k][c];
            }
        }
        let off = material.bend_offset(hi);
        for &(i, g) in gp {
            grad_material[off + i] += g;
        }
    }
    let kh = sim.params.handle_stiffness;
    for (p, pin) in rest.pins.iter().enumerate() {
        let g = gb3(pin.vertex);
        for c in 0..3 {
            gx_prev[pin.vertex][c] -= h * kh * g[c];
            grad_anchors[p][c] += h * kh * g[c];
        }
    }
    Ok((gx_prev, gv_prev))
}

/// Full reverse sweep from the gradient at the final state.
pub fn backward_simulate(
    sim: &Simulator,
    material: &MaterialField,
    tape: &SimTape,
    gx_final: &[[f64; 3]],
    gv_final: &[[f64; 3]],
) -> Result<GradientBundle> {
    let mut grad_material = vec![0.0; material.parameter_count()];
    let mut grad_anchors = vec![[0.0; 3]; sim.rest.pins.len()];
    let mut gx = gx_final.to_vec();
    let mut gv = gv_final.to_vec();
    for (t, record) in tape.records.iter().enumerate().rev() {
        (gx, gv) = backward_step(sim, material, record, &gx, &gv, &mut grad_material, &mut grad_anchors).map_err(
            |e| Error::Step {
                step: t,
                source: Box::new(e),
            },
        )?;
    }
    Ok(GradientBundle {
        material: grad_material,
        x0: gx,
        v0: gv,
        anchors: grad_anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{SimParams, SimState};
    use crate::material::Material;
    use crate::mesh::{generate_disk_mesh, MeshAssets};
    use rand::{Rng, SeedableRng};

    fn setup(exact: bool) -> (Simulator, MaterialField) {
        let mesh = generate_disk_mesh(0.15, 0.05).unwrap();
        let assets = MeshAssets::build(&mesh, 0.1, 0.06).unwrap();
        let params = SimParams {
            steps: 3,
            exact_jacobian: exact,
            ..SimParams::default()
        };
        let mut m = Material::uniform(40.0, 0.3, 1e-4);
        // the bias angle of a hinge is fixed, so varying bending rows keeps
        // the lookup smooth; grid nodes in strain or curvature are kinks
        for (i, row) in m.bend.0.iter_mut().enumerate() {
            for e in row.iter_mut() {
                *e *= 1.0 + 0.5 * i as f64;
            }
        }
        (Simulator::new(&assets, params).unwrap(), MaterialField::Homogeneous(m))
    }

    /// Loss: fixed random weights on the final positions and velocities.
    fn weights(n: usize) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut draw = || (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect::<Vec<_>>();
        (draw(), draw())
    }

    fn loss(sim: &Simulator, mat: &MaterialField, s0: &SimState, w: &(Vec<[f64; 3]>, Vec<[f64; 3]>)) -> f64 {
        let s = sim.simulate(s0, mat, false).unwrap().state;
        let mut l = 0.0;
        for i in 0..s.x.len() {
            for c in 0..3 {
                l += w.0[i][c] * s.x[i][c] + w.1[i][c] * s.v[i][c];
            }
        }
        l
    }

    fn check(exact: bool) {
        let (sim, mat) = setup(exact);
        let s0 = sim.initial_state();
        let w = weights(s0.x.len());
        let run = sim.simulate(&s0, &mat, true).unwrap();
        let grad = backward_simulate(&sim, &mat, run.tape.as_ref().unwrap(), &w.0, &w.1).unwrap();
        let base = mat.flatten();
        let mut checked = 0;
        for i in 0..base.len() {
            let step = 1e-4 * base[i].abs();
            let eval = |d: f64| {
                let mut p = base.clone();
                p[i] += d;
                let m = MaterialField::unflatten(mat.kind(), 0, 0, &p).unwrap();
                loss(&sim, &m, &s0, &w)
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            let an = grad.material[i];
            if fd.abs() < 1e-10 && an.abs() < 1e-10 {
                continue;
            }
            checked += 1;
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()), "param {i}: fd {fd:e} adjoint {an:e}");
        }
        assert!(checked >= 4, "only {checked} parameters influence the loss");
    }

    #[test]
    fn material_gradient_matches_finite_differences() {
        check(false);
    }

    #[test]
    fn exact_jacobian_gradient_matches_finite_differences() {
        check(true);
    }

    #[test]
    fn initial_state_gradient_matches_finite_differences() {
        let (sim, mat) = setup(false);
        let s0 = sim.initial_state();
        let w = weights(s0.x.len());
        let run = sim.simulate(&s0, &mat, true).unwrap();
        let grad = backward_simulate(&sim, &mat, run.tape.as_ref().unwrap(), &w.0, &w.1).unwrap();
        let eps = 1e-7;
        for vi in [0, 7, s0.x.len() - 1] {
            for c in 0..3 {
                let shifted = |d: f64, vel: bool| {
                    let mut s = s0.clone();
                    if vel {
                        s.v[vi][c] += d;
                    } else {
                        s.x[vi][c] += d;
                    }
                    loss(&sim, &mat, &s, &w)
                };
                let fdx = (shifted(eps, false) - shifted(-eps, false)) / (2.0 * eps);
                let fdv = (shifted(eps, true) - shifted(-eps, true)) / (2.0 * eps);
                assert!((fdx - grad.x0[vi][c]).abs() <= 1e-4 * fdx.abs().max(1.0), "x {vi} {c}");
                assert!((fdv - grad.v0[vi][c]).abs() <= 1e-4 * fdv.abs().max(1e-3), "v {vi} {c}");
            }
        }
    }

    #[test]
    fn anchor_gradient_matches_finite_differences() {
        let (sim, mat) = setup(false);
        let s0 = sim.initial_state();
        let w = weights(s0.x.len());
        let run = sim.simulate(&s0, &mat, true).unwrap();
        let grad = backward_simulate(&sim, &mat, run.tape.as_ref().unwrap(), &w.0, &w.1).unwrap();
        let eps = 1e-7;
        for p in [0, sim.rest.pins.len() / 2] {
            for c in 0..3 {
                let shifted = |d: f64| {
                    let mut s = sim.clone();
                    let mut rest = (*s.rest).clone();
                    rest.pins[p].anchor[c] += d;
                    s.rest = std::sync::Arc::new(rest);
                    loss(&s, &mat, &s0, &w)
                };
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                assert!(grad.anchors[p][c].is_finite());
                assert!((fd - grad.anchors[p][c]).abs() <= 1e-4 * fd.abs().max(1.0), "pin {p} {c}");
            }
        }
    }

    #[test]
    fn zero_incoming_gradient_gives_zero() {
        let (sim, mat) = setup(false);
        let s0 = sim.initial_state();
        let run = sim.simulate(&s0, &mat, true).unwrap();
        let z = vec![[0.0; 3]; s0.x.len()];
        let g = backward_simulate(&sim, &mat, run.tape.as_ref().unwrap(), &z, &z).unwrap();
        assert!(g.material.iter().all(|v| *v == 0.0));
        assert!(g.x0.iter().chain(&g.v0).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn sweeps_are_repeatable_and_linear() {
        let (sim, mat) = setup(false);
        let s0 = sim.initial_state();
        let w = weights(s0.x.len());
        let run = sim.simulate(&s0, &mat, true).unwrap();
        let tape = run.tape.unwrap();
        let a = backward_simulate(&sim, &mat, &tape, &w.0, &w.1).unwrap();
        let b = backward_simulate(&sim, &mat, &tape, &w.0, &w.1).unwrap();
        assert_eq!(a, b);
        let dbl = |v: &Vec<[f64; 3]>| v.iter().map(|r| r.map(|x| 2.0 * x)).collect::<Vec<_>>();
        let c = backward_simulate(&sim, &mat, &tape, &dbl(&w.0), &dbl(&w.1)).unwrap();
        for (x, y) in a.material.iter().zip(&c.material) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn empty_tape_passes_gradient_through() {
        let (sim, mat) = setup(false);
        let w = weights(sim.rest.positions.len());
        let g = backward_simulate(&sim, &mat, &SimTape::default(), &w.0, &w.1).unwrap();
        assert_eq!(g.x0, w.0);
        assert_eq!(g.v0, w.1);
    }
}
