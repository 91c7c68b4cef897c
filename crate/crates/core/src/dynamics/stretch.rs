//! Green-Lagrange stretching on triangles with strain-dependent stiffness.

use crate::autodiff::vec3::{self, V3};
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::material::{eval_stretch, STRETCH_COLS, STRETCH_ROWS};

/// Below this squared eigenvalue gap of `2E` the principal directions are
/// treated as tied: `phi = 0` and the gap contributes no derivative.
const TIE_EPS: f64 = 1e-24;

/// Strain of one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainDescriptor {
    pub eps_uu: f64,
    pub eps_vv: f64,
    /// Tensor shear component, `f_u . f_v / 2`.
    pub eps_uv: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Angle of the major principal direction to the warp axis, `[0, pi/2]`.
    pub phi: f64,
}

/// Deformation gradient columns: images of the warp and weft unit vectors.
#[inline(always)]
fn deformation<S: Real>(x: &[V3<S>; 3], dm: &[[f64; 2]; 2]) -> (V3<S>, V3<S>) {
    let e1 = vec3::sub(x[1], x[0]);
    let e2 = vec3::sub(x[2], x[0]);
    let fu = vec3::add(vec3::scale(e1, S::cst(dm[0][0])), vec3::scale(e2, S::cst(dm[1][0])));
    let fv = vec3::add(vec3::scale(e1, S::cst(dm[0][1])), vec3::scale(e2, S::cst(dm[1][1])));
    (fu, fv)
}

/// Weights `w_k` with `f_u = sum_k w_k[0] x_k` and `f_v = sum_k w_k[1] x_k`.
#[inline(always)]
fn vertex_weights(dm: &[[f64; 2]; 2]) -> [[f64; 2]; 3] {
    [
        [-(dm[0][0] + dm[1][0]), -(dm[0][1] + dm[1][1])],
        [dm[0][0], dm[0][1]],
        [dm[1][0], dm[1][1]],
    ]
}

/// `(eps_uu, eps_vv, eps_uv, lambda_max, lambda_min, phi)`.
#[inline(always)]
fn strain_generic<S: Real>(fu: V3<S>, fv: V3<S>) -> [S; 6] {
    let a = vec3::dot(fu, fu) - 1.0;
    let d = vec3::dot(fv, fv) - 1.0;
    let b = vec3::dot(fu, fv);
    let half_diff = (a - d) * 0.5;
    let gap2 = half_diff * half_diff + b * b;
    let tied = gap2.re() < TIE_EPS;
    let gap = if tied { S::cst(gap2.re().sqrt()) } else { gap2.sqrt() };
    let mean = (a + d) * 0.5;
    let e_max = mean + gap;
    let e_min = mean - gap;
    let lambda_max = (e_max + 1.0).sqrt() - 1.0;
    let lambda_min = (e_min + 1.0).sqrt() - 1.0;
    let phi = if tied {
        S::zero()
    } else {
        let ang = (b * 2.0).atan2(a - d) * 0.5;
        if ang.re() < 0.0 {
            -ang
        } else {
            ang
        }
    };
    [a * 0.5, d * 0.5, b * 0.5, lambda_max, lambda_min, phi]
}

/// Strain descriptor of a face with vertex positions `x` and rest frame `dm`.
pub fn face_strain(x: [[f64; 3]; 3], dm: &[[f64; 2]; 2]) -> Result<StrainDescriptor> {
    let n = vec3::cross(vec3::sub(x[1], x[0]), vec3::sub(x[2], x[0]));
    let area = 0.5 * vec3::norm(n);
    if !(area > 1e-12) {
        return Err(Error::DegenerateFace { face: 0, area });
    }
    let (fu, fv) = deformation(&x, dm);
    let [eps_uu, eps_vv, eps_uv, lambda_max, lambda_min, phi] = strain_generic(fu, fv);
    Ok(StrainDescriptor {
        eps_uu,
        eps_vv,
        eps_uv,
        lambda_max,
        lambda_min,
        phi,
    })
}

/// `(lambda_max, phi)` of a face, used to pick the active stiffness cell.
pub fn stiffness_query(x: [[f64; 3]; 3], dm: &[[f64; 2]; 2]) -> (f64, f64) {
    let (fu, fv) = deformation(&x, dm);
    let s = strain_generic(fu, fv);
    (s[3], s[5])
}

/// Stress scale (N/m) below which the filtered Jacobian fades out the
/// geometric stiffness of a principal stress.
const FILTER_SCALE: f64 = 1e-3;

/// Value and first three derivatives of the ramp
/// `f(x) = FILTER_SCALE * ln(1 + exp(x / FILTER_SCALE))`.
#[inline(always)]
fn smooth_ramp<S: Real>(x: S) -> (S, S, S, S) {
    let t = x / FILTER_SCALE;
    // ln(1 + e^t) = max(t, 0) + ln(1 + e^-|t|)
    let positive = t.re() > 0.0;
    let (pos, neg_abs) = if positive { (t, -t) } else { (S::zero(), t) };
    let e = neg_abs.exp();
    let f = (pos + (e + 1.0).ln()) * FILTER_SCALE;
    let s = if positive { S::cst(1.0) / (e + 1.0) } else { e / (e + 1.0) };
    let s1 = s * (S::cst(1.0) - s);
    (f, s, s1 / FILTER_SCALE, s1 * (S::cst(1.0) - s * 2.0) / (FILTER_SCALE * FILTER_SCALE))
}

/// Smooth positive part of the symmetric 2x2 matrix `[[a, b], [b, d]]`:
/// each eigenvalue is mapped through [`smooth_ramp`]. Written as
/// `alpha I + beta S`, with a series expansion near repeated eigenvalues.
#[inline(always)]
fn positive_part<S: Real>(a: S, b: S, d: S) -> (S, S, S) {
    let half_diff = (a - d) * 0.5;
    let gap2 = half_diff * half_diff + b * b;
    let mean = (a + d) * 0.5;
    let (alpha, beta) = if gap2.re() < (1e-3 * FILTER_SCALE).powi(2) {
        let (f, f1, f2, f3) = smooth_ramp(mean);
        (f - mean * f1 + gap2 * (f2 * 0.5 - mean * f3 / 6.0), f1 + f3 * gap2 / 6.0)
    } else {
        let gap = gap2.sqrt();
        let (fp, ..) = smooth_ramp(mean + gap);
        let (fm, ..) = smooth_ramp(mean - gap);
        let beta = (fp - fm) / (gap * 2.0);
        (fm - beta * (mean - gap), beta)
    };
    (alpha + beta * a, beta * b, alpha + beta * d)
}

/// `d eps / d x_k` contracted with the stress, for one vertex.
#[inline(always)]
fn stress_direction<S: Real>(s: (S, S, S), fu: V3<S>, fv: V3<S>, wu: f64, wv: f64) -> V3<S> {
    let (suu, suv, svv) = s;
    std::array::from_fn(|c| suu * (fu[c] * wu) + svv * (fv[c] * wv) + suv * ((fv[c] * wu + fu[c] * wv) * 0.5))
}

/// Per-vertex stretching forces of one face.
///
/// `f_k = -A (s_uu w_ku f_u + s_vv w_kv f_v + s_uv (w_ku f_v + w_kv f_u) / 2)`
/// with stress `s = C eps` and `C` interpolated at the face's
/// `(lambda_max, phi)`; the coupling entry is `c12 sqrt(c11 c22)`.
///
/// With `filtered` the returned values are unchanged but their outermost
/// tangent uses a smooth positive part of the stress in the geometric
/// term, so the implied Jacobian stays negative semi-definite under
/// compression.
#[inline(always)]
pub fn stretch_forces<S: Real>(
    x: &[V3<S>; 3],
    dm: &[[f64; 2]; 2],
    area: f64,
    table: &[[S; STRETCH_COLS]; STRETCH_ROWS],
    filtered: bool,
) -> [V3<S>; 3] {
    let (fu, fv) = deformation(x, dm);
    let [euu, evv, euv, lambda_max, _, phi] = strain_generic(fu, fv);
    let [c11, c12, c22, c33] = eval_stretch(table, lambda_max, phi);
    let k = c12 * (c11 * c22).sqrt();
    let stress = (c11 * euu + k * evv, c33 * euv, k * euu + c22 * evv);
    let w = vertex_weights(dm);
    let mut out = [[S::zero(); 3]; 3];
    if !filtered {
        for (kv, o) in out.iter_mut().enumerate() {
            let g = stress_direction(stress, fu, fv, w[kv][0], w[kv][1]);
            *o = g.map(|gc| gc * (-area));
        }
        return out;
    }
    let (fu_d, fv_d) = (fu.map(S::detach), fv.map(S::detach));
    // shear enters the stress tensor as s_uv / 2 off the diagonal
    let (p_uu, p_half, p_vv) = positive_part(stress.0.detach(), stress.1.detach() * 0.5, stress.2.detach());
    let plus = (p_uu, p_half * 2.0, p_vv);
    for (kv, o) in out.iter_mut().enumerate() {
        let (wu, wv) = (w[kv][0], w[kv][1]);
        let material = stress_direction(stress, fu_d, fv_d, wu, wv);
        let geometric = stress_direction(plus, fu, fv, wu, wv);
        let cancel = stress_direction(plus, fu_d, fv_d, wu, wv);
        *o = std::array::from_fn(|c| (material[c] + geometric[c] - cancel[c]) * (-area));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use crate::material::{lift_stretch, StretchStiffness};

    fn unit_right_triangle() -> ([[f64; 3]; 3], [[f64; 2]; 2]) {
        let x = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        (x, [[1.0, 0.0], [0.0, 1.0]])
    }

    #[test]
    fn rest_face_has_zero_strain() {
        let (x, dm) = unit_right_triangle();
        let s = face_strain(x, &dm).unwrap();
        assert_eq!((s.eps_uu, s.eps_vv, s.eps_uv, s.lambda_max, s.phi), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn warp_stretch_closed_form() {
        let (mut x, dm) = unit_right_triangle();
        let s = 1.07;
        x[1][0] = s;
        let d = face_strain(x, &dm).unwrap();
        assert!((d.eps_uu - (s * s - 1.0) / 2.0).abs() < 1e-14);
        assert_eq!(d.eps_vv, 0.0);
        assert_eq!(d.eps_uv, 0.0);
        assert!((d.lambda_max - (s - 1.0)).abs() < 1e-14);
        assert!(d.phi.abs() < 1e-14);
    }

    #[test]
    fn isotropic_stretch_ties_break_to_zero() {
        let (mut x, dm) = unit_right_triangle();
        x[1][0] = 1.03;
        x[2][1] = 1.03;
        let d = face_strain(x, &dm).unwrap();
        assert!((d.lambda_max - 0.03).abs() < 1e-14);
        assert!((d.lambda_min - 0.03).abs() < 1e-14);
        assert_eq!(d.phi, 0.0);
    }

    #[test]
    fn principal_values_reconstruct_strain() {
        let dm = [[1.3, -0.2], [0.1, 0.9]];
        let x = [[0.1, 0.0, 0.02], [0.9, 0.15, -0.03], [0.05, 1.2, 0.1]];
        let d = face_strain(x, &dm).unwrap();
        let emax = (d.lambda_max + 1.0).powi(2) - 1.0;
        let emin = (d.lambda_min + 1.0).powi(2) - 1.0;
        // 2E = R diag(emax, emin) R^T with R the rotation by +/- phi
        let (c, s) = (d.phi.cos(), d.phi.sin());
        let a = emax * c * c + emin * s * s;
        let dd = emax * s * s + emin * c * c;
        let b = (emax - emin) * c * s;
        assert!((a - 2.0 * d.eps_uu).abs() < 1e-12);
        assert!((dd - 2.0 * d.eps_vv).abs() < 1e-12);
        assert!((b - 2.0 * d.eps_uv.abs()).abs() < 1e-12);
    }

    #[test]
    fn warp_stretch_force_matches_hand_evaluation() {
        // single right triangle, legs 1 m, warp stretch s
        let (mut x, dm) = unit_right_triangle();
        let s = 1.01;
        x[1][0] = s;
        let c11 = 40.0;
        let table = lift_stretch::<f64>(&StretchStiffness::uniform(c11, 0.0, 60.0, 20.0));
        let f = stretch_forces(&x, &dm, 0.5, &table, false);
        // only eps_uu is nonzero; vertex 1 has w_u = 1, f_u = (s, 0, 0)
        let expect = -0.5 * c11 * (s * s - 1.0) / 2.0 * s;
        assert!((f[1][0] - expect).abs() < 1e-14);
        assert!((f[0][0] + expect).abs() < 1e-14);
        assert_eq!(f[2], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let dm = [[1.3, -0.2], [0.1, 0.9]];
        let x = [[0.1, 0.0, 0.02], [0.9, 0.15, -0.03], [0.05, 1.2, 0.1]];
        let mut c = StretchStiffness::uniform(30.0, 0.3, 50.0, 10.0);
        for (r, row) in c.0.iter_mut().enumerate() {
            row[0] += 5.0 * r as f64;
        }
        type D = Dual<f64, 9>;
        let xd: [[D; 3]; 3] = std::array::from_fn(|k| std::array::from_fn(|c| D::var(x[k][c], 3 * k + c)));
        let f = stretch_forces(&xd, &dm, 0.4, &lift_stretch::<D>(&c), false);
        let table = lift_stretch::<f64>(&c);
        let h = 1e-6;
        for j in 0..9 {
            let (mut xp, mut xm) = (x, x);
            xp[j / 3][j % 3] += h;
            xm[j / 3][j % 3] -= h;
            let fp = stretch_forces(&xp, &dm, 0.4, &table, false);
            let fm = stretch_forces(&xm, &dm, 0.4, &table, false);
            for i in 0..9 {
                let fd = (fp[i / 3][i % 3] - fm[i / 3][i % 3]) / (2.0 * h);
                let an = f[i / 3][i % 3].eps[j];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1.0), "({i},{j}) {fd} {an}");
            }
        }
    }
}

#[cfg(test)]
mod filter_tests {
    use super::*;
    use crate::autodiff::Dual;
    use crate::material::{lift_stretch, StretchStiffness};

    fn eval(x: [[f64; 3]; 3], filtered: bool) -> [[Dual<f64, 9>; 3]; 3] {
        type D = Dual<f64, 9>;
        let dm = [[1.0, 0.0], [0.0, 1.0]];
        let c = StretchStiffness::uniform(30.0, 0.3, 50.0, 10.0);
        let xd: [[D; 3]; 3] = std::array::from_fn(|k| std::array::from_fn(|c| D::var(x[k][c], 3 * k + c)));
        stretch_forces(&xd, &dm, 0.5, &lift_stretch::<D>(&c), filtered)
    }

    fn hessian_min_eigenvalue(j: &[[f64; 9]; 9]) -> f64 {
        let h = faer::Mat::from_fn(9, 9, |i, k| -(j[i][k] + j[k][i]) / 2.0);
        h.self_adjoint_eigenvalues(faer::Side::Lower).unwrap()[0]
    }

    #[test]
    fn filtered_forces_keep_values() {
        let x = [[0.0, 0.0, 0.0], [0.97, 0.02, 0.01], [0.01, 0.95, -0.02]];
        let a = eval(x, false);
        let b = eval(x, true);
        for k in 0..3 {
            for c in 0..3 {
                assert!((a[k][c].re - b[k][c].re).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn filtered_jacobian_is_stable_under_compression() {
        let x = [[0.0, 0.0, 0.0], [0.95, 0.0, 0.0], [0.0, 0.93, 0.0]];
        let jac = |f: [[Dual<f64, 9>; 3]; 3]| -> [[f64; 9]; 9] { std::array::from_fn(|i| f[i / 3][i % 3].eps) };
        assert!(hessian_min_eigenvalue(&jac(eval(x, false))) < -1e-3);
        assert!(hessian_min_eigenvalue(&jac(eval(x, true))) > -1e-9);
    }

    #[test]
    fn filter_is_inactive_under_tension() {
        let x = [[0.0, 0.0, 0.0], [1.05, 0.0, 0.0], [0.0, 1.02, 0.0]];
        let a = eval(x, false);
        let b = eval(x, true);
        for k in 0..3 {
            for c in 0..3 {
                for d in 0..9 {
                    assert!((a[k][c].eps[d] - b[k][c].eps[d]).abs() < 1e-12);
                }
            }
        }
    }

    fn ramp(x: f64) -> f64 {
        smooth_ramp(x).0
    }

    #[test]
    fn positive_part_maps_eigenvalues() {
        for &(a, b, d) in &[(0.3, 0.1, -0.2), (-0.004, 0.002, 0.001), (2e-3, 0.0, -1e-3), (0.5, 0.4, 0.7)] {
            let (pa, pb, pd) = positive_part(a, b, d);
            let mean = (a + d) / 2.0;
            let gap = (((a - d) / 2.0f64).powi(2) + b * b).sqrt();
            // trace and determinant of the mapped matrix
            let (fp, fm) = (ramp(mean + gap), ramp(mean - gap));
            assert!((pa + pd - (fp + fm)).abs() < 1e-12);
            assert!((pa * pd - pb * pb - fp * fm).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_part_is_continuous_across_ties() {
        let (a, d) = (2e-4, 2e-4);
        let below = positive_part(a, 0.999e-6, d);
        let above = positive_part(a, 1.001e-6, d);
        assert!((below.0 - above.0).abs() < 1e-12);
        assert!((below.1 - above.1).abs() < 1e-8);
        let tied = positive_part(a, 0.0, d);
        assert!((tied.0 - ramp(a)).abs() < 1e-15 && tied.1 == 0.0);
    }

    #[test]
    fn ramp_derivatives_match_finite_differences() {
        type D = Dual<f64, 1>;
        for x in [-3e-3, -1e-4, 0.0, 5e-4, 4e-3, 0.2] {
            let (_, f1, f2, f3) = smooth_ramp(D::var(x, 0));
            assert!((f1.eps[0] - f2.re).abs() < 1e-9 * f2.re.abs().max(1.0));
            assert!((f2.eps[0] - f3.re).abs() < 1e-9 * f3.re.abs().max(1.0));
            let h = 1e-7;
            assert!(((ramp(x + h) - ramp(x - h)) / (2.0 * h) - f1.re).abs() < 1e-6);
        }
    }
}
