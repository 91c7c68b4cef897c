//! Triangle and hinge geometry shared by the rest-state builder and the
//! force kernels.

use crate::autodiff::vec3::{self, V3};
use crate::autodiff::Real;

pub fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
}

/// Signed angle between the normals of the two faces of a hinge.
///
/// `e0 -> e1` is the shared edge as it appears in the first face
/// `(e0, e1, o0)`; the second face is `(e1, e0, o1)`. A flat hinge gives
/// zero; the sign is positive when the hinge folds towards the first face's
/// normal side.
#[inline(always)]
pub fn hinge_normal_angle<S: Real>(e0: V3<S>, e1: V3<S>, o0: V3<S>, o1: V3<S>) -> S {
    let e = vec3::sub(e1, e0);
    let n0 = vec3::cross(e, vec3::sub(o0, e0));
    let n1 = vec3::cross(vec3::sub(e0, e1), vec3::sub(o1, e1));
    let len = vec3::norm(e);
    let sin_part = vec3::dot(vec3::cross(n0, n1), e) / len;
    let cos_part = vec3::dot(n0, n1);
    sin_part.atan2(cos_part)
}

/// Interior dihedral angle: `pi` for a flat hinge.
pub fn dihedral_angle(e0: [f64; 3], e1: [f64; 3], o0: [f64; 3], o1: [f64; 3]) -> f64 {
    std::f64::consts::PI - hinge_normal_angle(e0, e1, o0, o1)
}

/// Gradient of [`hinge_normal_angle`] with respect to `(e0, e1, o0, o1)`.
///
/// These are the bending mode vectors: they sum to zero and carry no net
/// torque because the angle is invariant under rigid motions.
#[inline(always)]
pub fn hinge_angle_gradient<S: Real>(e0: V3<S>, e1: V3<S>, o0: V3<S>, o1: V3<S>) -> [V3<S>; 4] {
    let e = vec3::sub(e1, e0);
    let n0 = vec3::cross(e, vec3::sub(o0, e0));
    let n1 = vec3::cross(vec3::sub(e0, e1), vec3::sub(o1, e1));
    let len2 = vec3::dot(e, e);
    let len = len2.sqrt();
    let n0sq = vec3::dot(n0, n0);
    let n1sq = vec3::dot(n1, n1);
    // wing vertices move along their face normals, scaled by 1/height
    let g_o0 = vec3::scale(n0, -len / n0sq);
    let g_o1 = vec3::scale(n1, -len / n1sq);
    // edge vertices: lever-arm weighted combination of the wing terms
    let t0 = vec3::dot(vec3::sub(o0, e0), e) / len2;
    let t1 = vec3::dot(vec3::sub(o1, e0), e) / len2;
    let g_e0 = vec3::add(
        vec3::scale(g_o0, t0 - 1.0),
        vec3::scale(g_o1, t1 - 1.0),
    );
    let g_e1 = vec3::add(vec3::scale(g_o0, -t0), vec3::scale(g_o1, -t1));
    [g_e0, g_e1, g_o0, g_o1]
}
