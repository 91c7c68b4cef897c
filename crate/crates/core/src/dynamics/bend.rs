//! Discrete hinge bending with curvature- and direction-dependent stiffness.

use crate::autodiff::vec3::V3;
use crate::autodiff::Real;
use crate::geometry::{hinge_angle_gradient, hinge_normal_angle};
use crate::material::{eval_bend, BEND_COLS, BEND_ROWS};
use crate::mesh::HingeRest;

/// `alpha = sin(gamma/2 - rest/2) / (psi1 + psi2)`, the curvature measure
/// used to look up bending stiffness.
#[inline(always)]
fn curvature_measure<S: Real>(theta: S, rest: &HingeRest) -> S {
    // gamma = pi - theta, so gamma/2 - rest/2 = (pi - rest - theta) / 2
    let half = (S::cst(std::f64::consts::PI - rest.rest_dihedral) - theta) * 0.5;
    half.sin() / (rest.heights[0] + rest.heights[1])
}

/// Curvature measure and bending stiffness lookup point of a hinge.
pub fn bend_query(x: [[f64; 3]; 4], rest: &HingeRest) -> f64 {
    let theta = hinge_normal_angle(x[0], x[1], x[2], x[3]);
    curvature_measure(theta, rest)
}

/// Forces on `(e0, e1, o0, o1)` of one hinge:
/// `k_b |e| / (psi1 + psi2) * sin(gamma/2 - rest/2) * u_i`, where `u_i` is
/// the gradient of the normal angle and `gamma` the dihedral angle.
///
/// With `filtered` the values are unchanged but the mode vectors carry no
/// outermost tangent, dropping the indefinite curvature term from the
/// implied Jacobian.
#[inline(always)]
pub fn bend_forces<S: Real>(
    x: &[V3<S>; 4],
    rest: &HingeRest,
    table: &[[S; BEND_COLS]; BEND_ROWS],
    filtered: bool,
) -> [V3<S>; 4] {
    let theta = hinge_normal_angle(x[0], x[1], x[2], x[3]);
    let mut u = hinge_angle_gradient(x[0], x[1], x[2], x[3]);
    if filtered {
        u = u.map(|ui| ui.map(S::detach));
    }
    let half = (S::cst(std::f64::consts::PI - rest.rest_dihedral) - theta) * 0.5;
    let psi = rest.heights[0] + rest.heights[1];
    let alpha = half.sin() / psi;
    let kb = eval_bend(table, alpha, rest.bias_angle);
    let mag = kb * half.sin() * (rest.edge_length / psi);
    u.map(|ui| [ui[0] * mag, ui[1] * mag, ui[2] * mag])
}
