//! Anisotropic, strain-dependent stiffness sample spaces.
//!
//! Stretching stiffness is tabulated on a small `(lambda_max, phi)` grid,
//! bending stiffness on an `(alpha, beta)` grid; both are evaluated by
//! clamped bilinear interpolation. The evaluation routines are generic over
//! [`Real`] so the same code yields values, Jacobians and parameter
//! gradients.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Principal stretch sample values of the stretching table.
pub const STRETCH_LAMBDA_GRID: [f64; 2] = [0.02, 0.10];
/// Strain-direction sample values of the stretching table (radians).
pub const STRETCH_PHI_GRID: [f64; 3] = [0.0, FRAC_PI_4, FRAC_PI_2];
/// Curvature-like sample values of the bending table (1/m).
pub const BEND_ALPHA_GRID: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
/// Bending bias angles of the bending table (radians).
pub const BEND_BETA_GRID: [f64; 3] = [0.0, FRAC_PI_4, FRAC_PI_2];

/// Lower bound on `c11`, `c22`, `c33` entries (N/m).
pub const STRETCH_FLOOR: f64 = 1e-8;
/// Lower bound on bending entries (N m).
pub const BEND_FLOOR: f64 = 1e-12;
/// Upper bound on the dimensionless coupling `c12`.
pub const COUPLING_MAX: f64 = 0.99;

pub const STRETCH_ROWS: usize = 6;
pub const STRETCH_COLS: usize = 4;
pub const BEND_ROWS: usize = 3;
pub const BEND_COLS: usize = 5;
pub const STRETCH_PARAMS: usize = STRETCH_ROWS * STRETCH_COLS;
pub const BEND_PARAMS: usize = BEND_ROWS * BEND_COLS;
/// Scalars in one homogeneous material.
pub const HOMOGENEOUS_PARAMS: usize = STRETCH_PARAMS + BEND_PARAMS;

/// Stretching table; row `i_lambda * 3 + i_phi`, columns `(c11, c12, c22, c33)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StretchStiffness(pub [[f64; STRETCH_COLS]; STRETCH_ROWS]);

/// Bending table; row per bias angle, column per `alpha` sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BendStiffness(pub [[f64; BEND_COLS]; BEND_ROWS]);

impl StretchStiffness {
    /// Same `(c11, c12, c22, c33)` at every grid point.
    pub fn uniform(c11: f64, c12: f64, c22: f64, c33: f64) -> Self {
        Self([[c11, c12, c22, c33]; STRETCH_ROWS])
    }

    pub fn flat(&self) -> [f64; STRETCH_PARAMS] {
        let mut out = [0.0; STRETCH_PARAMS];
        for (r, row) in self.0.iter().enumerate() {
            out[r * STRETCH_COLS..(r + 1) * STRETCH_COLS].copy_from_slice(row);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut c = [[0.0; STRETCH_COLS]; STRETCH_ROWS];
        for (r, row) in c.iter_mut().enumerate() {
            row.copy_from_slice(&v[r * STRETCH_COLS..(r + 1) * STRETCH_COLS]);
        }
        Self(c)
    }
}

impl BendStiffness {
    pub fn uniform(k: f64) -> Self {
        Self([[k; BEND_COLS]; BEND_ROWS])
    }

    pub fn flat(&self) -> [f64; BEND_PARAMS] {
        let mut out = [0.0; BEND_PARAMS];
        for (r, row) in self.0.iter().enumerate() {
            out[r * BEND_COLS..(r + 1) * BEND_COLS].copy_from_slice(row);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut b = [[0.0; BEND_COLS]; BEND_ROWS];
        for (r, row) in b.iter_mut().enumerate() {
            row.copy_from_slice(&v[r * BEND_COLS..(r + 1) * BEND_COLS]);
        }
        Self(b)
    }
}

/// Locates `x` on a sorted grid: cell index and the interpolation weight of
/// the upper node. Outside the grid the weight is a constant, so derivatives
/// with respect to `x` vanish there.
#[inline(always)]
fn locate<S: Real>(grid: &[f64], x: S) -> (usize, S) {
    let last = grid.len() - 1;
    let xv = x.re();
    if !(xv > grid[0]) {
        return (0, S::cst(0.0));
    }
    if xv >= grid[last] {
        return (last - 1, S::cst(1.0));
    }
    let mut i = 0;
    while xv >= grid[i + 1] {
        i += 1;
    }
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

/// Clamps an entry to `[lo, hi]`; clamped entries are constants.
#[inline(always)]
fn clamp_entry<S: Real>(v: S, lo: f64, hi: f64) -> S {
    let r = v.re();
    if r < lo {
        S::cst(lo)
    } else if r > hi {
        S::cst(hi)
    } else {
        v
    }
}

/// Floors a raw stretching row: `c11, c22, c33 >= STRETCH_FLOOR`,
/// `c12` in `[0, COUPLING_MAX]`.
#[inline(always)]
pub fn floor_stretch_row<S: Real>(row: [S; STRETCH_COLS]) -> [S; STRETCH_COLS] {
    [
        clamp_entry(row[0], STRETCH_FLOOR, f64::INFINITY),
        clamp_entry(row[1], 0.0, COUPLING_MAX),
        clamp_entry(row[2], STRETCH_FLOOR, f64::INFINITY),
        clamp_entry(row[3], STRETCH_FLOOR, f64::INFINITY),
    ]
}

/// Local `(c11, c12, c22, c33)` at principal stretch `lambda_max` and strain
/// direction `phi`, from a (possibly dual-valued) table.
#[inline(always)]
pub fn eval_stretch<S: Real>(c: &[[S; STRETCH_COLS]; STRETCH_ROWS], lambda_max: S, phi: S) -> [S; STRETCH_COLS] {
    let (il, tl) = locate(&STRETCH_LAMBDA_GRID, lambda_max);
    let (ip, tp) = locate(&STRETCH_PHI_GRID, phi);
    let node = |a: usize, b: usize| floor_stretch_row(c[a * 3 + b]);
    let (c00, c01) = (node(il, ip), node(il, ip + 1));
    let (c10, c11) = (node(il + 1, ip), node(il + 1, ip + 1));
    let mut out = [S::zero(); STRETCH_COLS];
    for k in 0..STRETCH_COLS {
        let lo = c00[k] * (S::cst(1.0) - tp) + c01[k] * tp;
        let hi = c10[k] * (S::cst(1.0) - tp) + c11[k] * tp;
        out[k] = lo * (S::cst(1.0) - tl) + hi * tl;
    }
    out
}

/// Bending stiffness at curvature measure `alpha` (its magnitude is used)
/// and bias angle `beta`.
#[inline(always)]
pub fn eval_bend<S: Real>(b: &[[S; BEND_COLS]; BEND_ROWS], alpha: S, beta: f64) -> S {
    let a = if alpha.re() < 0.0 { -alpha } else { alpha };
    let (ia, ta) = locate(&BEND_ALPHA_GRID, a);
    let (ib, tb) = locate(&BEND_BETA_GRID, beta);
    let node = |r: usize, k: usize| clamp_entry(b[r][k], BEND_FLOOR, f64::INFINITY);
    let lo = node(ib, ia) * (S::cst(1.0) - ta) + node(ib, ia + 1) * ta;
    let hi = node(ib + 1, ia) * (S::cst(1.0) - ta) + node(ib + 1, ia + 1) * ta;
    lo * (1.0 - tb) + hi * tb
}

/// Table rows blended by [`eval_stretch`] at `(lambda_max, phi)`.
pub fn stretch_support(lambda_max: f64, phi: f64) -> [usize; 4] {
    let (il, _) = locate(&STRETCH_LAMBDA_GRID, lambda_max);
    let (ip, _) = locate(&STRETCH_PHI_GRID, phi);
    [il * 3 + ip, il * 3 + ip + 1, (il + 1) * 3 + ip, (il + 1) * 3 + ip + 1]
}

/// Table entries `(row, col)` blended by [`eval_bend`] at `(alpha, beta)`.
pub fn bend_support(alpha: f64, beta: f64) -> [(usize, usize); 4] {
    let (ia, _) = locate(&BEND_ALPHA_GRID, alpha.abs());
    let (ib, _) = locate(&BEND_BETA_GRID, beta);
    [(ib, ia), (ib, ia + 1), (ib + 1, ia), (ib + 1, ia + 1)]
}

pub fn lift_stretch<S: Real>(c: &StretchStiffness) -> [[S; STRETCH_COLS]; STRETCH_ROWS] {
    c.0.map(|row| row.map(S::cst))
}

pub fn lift_bend<S: Real>(b: &BendStiffness) -> [[S; BEND_COLS]; BEND_ROWS] {
    b.0.map(|row| row.map(S::cst))
}

impl StretchStiffness {
    pub fn eval(&self, lambda_max: f64, phi: f64) -> [f64; STRETCH_COLS] {
        eval_stretch(&self.0, lambda_max, phi)
    }
}

impl BendStiffness {
    pub fn eval(&self, alpha: f64, beta: f64) -> f64 {
        eval_bend(&self.0, alpha, beta)
    }
}

/// One homogeneous material: a stretching and a bending table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub stretch: StretchStiffness,
    pub bend: BendStiffness,
}

impl Material {
    pub fn uniform(stretch: f64, coupling: f64, bend: f64) -> Self {
        Self {
            stretch: StretchStiffness::uniform(stretch, coupling, stretch, stretch),
            bend: BendStiffness::uniform(bend),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(HOMOGENEOUS_PARAMS);
        v.extend_from_slice(&self.stretch.flat());
        v.extend_from_slice(&self.bend.flat());
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != HOMOGENEOUS_PARAMS {
            return Err(Error::LengthMismatch {
                expected: HOMOGENEOUS_PARAMS,
                got: v.len(),
            });
        }
        Ok(Self {
            stretch: StretchStiffness::from_flat(&v[..STRETCH_PARAMS]),
            bend: BendStiffness::from_flat(&v[STRETCH_PARAMS..]),
        })
    }
}

/// Which layout a material field uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Homogeneous,
    Heterogeneous,
}

/// Stiffness tables for a whole mesh.
#[derive(Clone, Debug, PartialEq)]
pub enum MaterialField {
    Homogeneous(Material),
    /// One stretching table per face, one bending table per hinge.
    Heterogeneous {
        stretch: Vec<StretchStiffness>,
        bend: Vec<BendStiffness>,
    },
}

impl MaterialField {
    /// Heterogeneous field with every element set to `m`.
    pub fn tied(m: &Material, faces: usize, hinges: usize) -> Self {
        MaterialField::Heterogeneous {
            stretch: vec![m.stretch; faces],
            bend: vec![m.bend; hinges],
        }
    }

    pub fn kind(&self) -> MaterialKind {
        match self {
            MaterialField::Homogeneous(_) => MaterialKind::Homogeneous,
            MaterialField::Heterogeneous { .. } => MaterialKind::Heterogeneous,
        }
    }

    #[inline]
    pub fn stretch(&self, face: usize) -> &StretchStiffness {
        match self {
            MaterialField::Homogeneous(m) => &m.stretch,
            MaterialField::Heterogeneous { stretch, .. } => &stretch[face],
        }
    }

    #[inline]
    pub fn bend(&self, hinge: usize) -> &BendStiffness {
        match self {
            MaterialField::Homogeneous(m) => &m.bend,
            MaterialField::Heterogeneous { bend, .. } => &bend[hinge],
        }
    }

    /// Offset of a face's stretching table in the flat parameter vector.
    #[inline]
    pub fn stretch_offset(&self, face: usize) -> usize {
        match self {
            MaterialField::Homogeneous(_) => 0,
            MaterialField::Heterogeneous { .. } => face * STRETCH_PARAMS,
        }
    }

    /// Offset of a hinge's bending table in the flat parameter vector.
    #[inline]
    pub fn bend_offset(&self, hinge: usize) -> usize {
        match self {
            MaterialField::Homogeneous(_) => STRETCH_PARAMS,
            MaterialField::Heterogeneous { stretch, .. } => {
                stretch.len() * STRETCH_PARAMS + hinge * BEND_PARAMS
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            MaterialField::Homogeneous(_) => HOMOGENEOUS_PARAMS,
            MaterialField::Heterogeneous { stretch, bend } => {
                parameter_count(MaterialKind::Heterogeneous, stretch.len(), bend.len())
            }
        }
    }

    /// Stretching tables in face order, then bending tables in hinge order.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            MaterialField::Homogeneous(m) => m.to_vec(),
            MaterialField::Heterogeneous { stretch, bend } => {
                let mut v = Vec::with_capacity(self.parameter_count());
                for c in stretch {
                    v.extend_from_slice(&c.flat());
                }
                for b in bend {
                    v.extend_from_slice(&b.flat());
                }
                v
            }
        }
    }

    pub fn unflatten(kind: MaterialKind, faces: usize, hinges: usize, v: &[f64]) -> Result<Self> {
        let expected = parameter_count(kind, faces, hinges);
        if v.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: v.len(),
            });
        }
        Ok(match kind {
            MaterialKind::Homogeneous => MaterialField::Homogeneous(Material::from_slice(v)?),
            MaterialKind::Heterogeneous => {
                let (sv, bv) = v.split_at(faces * STRETCH_PARAMS);
                MaterialField::Heterogeneous {
                    stretch: sv.chunks_exact(STRETCH_PARAMS).map(StretchStiffness::from_flat).collect(),
                    bend: bv.chunks_exact(BEND_PARAMS).map(BendStiffness::from_flat).collect(),
                }
            }
        })
    }

    pub fn check_sizes(&self, faces: usize, hinges: usize) -> Result<()> {
        if let MaterialField::Heterogeneous { stretch, bend } = self {
            if stretch.len() != faces {
                return Err(Error::LengthMismatch {
                    expected: faces,
                    got: stretch.len(),
                });
            }
            if bend.len() != hinges {
                return Err(Error::LengthMismatch {
                    expected: hinges,
                    got: bend.len(),
                });
            }
        }
        Ok(())
    }
}

/// Learnable scalars of a material layout on a mesh with `faces` faces and
/// `hinges` hinges.
pub fn parameter_count(kind: MaterialKind, faces: usize, hinges: usize) -> usize {
    match kind {
        MaterialKind::Homogeneous => HOMOGENEOUS_PARAMS,
        MaterialKind::Heterogeneous => STRETCH_PARAMS * faces + BEND_PARAMS * hinges,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lambda_max: Vec<f64>,
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GridSpec {
    pub fn current() -> Self {
        Self {
            lambda_max: STRETCH_LAMBDA_GRID.to_vec(),
            phi: STRETCH_PHI_GRID.to_vec(),
            alpha: BEND_ALPHA_GRID.to_vec(),
            beta: BEND_BETA_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<MaterialKind>,
    grid: GridSpec,
    #[serde(rename = "C")]
    c: serde_json::Value,
    #[serde(rename = "B")]
    b: serde_json::Value,
}

fn matrix_from_json<const R: usize, const K: usize>(v: &serde_json::Value, path: &str) -> Result<[[f64; K]; R]> {
    let m: Vec<Vec<f64>> = serde_json::from_value(v.clone()).map_err(|e| Error::schema(path, e.to_string()))?;
    if m.len() != R || m.iter().any(|r| r.len() != K) {
        return Err(Error::schema(path, format!("expected a {R}x{K} matrix")));
    }
    let mut out = [[0.0; K]; R];
    for (o, r) in out.iter_mut().zip(&m) {
        o.copy_from_slice(r);
    }
    Ok(out)
}

/// Serializes a field as `{"kind", "grid", "C", "B"}`. A heterogeneous field
/// stores arrays of tables indexed by face and hinge.
pub fn material_to_json(field: &MaterialField) -> serde_json::Value {
    let to_v = |x: &[[f64; STRETCH_COLS]; STRETCH_ROWS]| serde_json::json!(x.to_vec());
    let to_b = |x: &[[f64; BEND_COLS]; BEND_ROWS]| serde_json::json!(x.to_vec());
    let (c, b) = match field {
        MaterialField::Homogeneous(m) => (to_v(&m.stretch.0), to_b(&m.bend.0)),
        MaterialField::Heterogeneous { stretch, bend } => (
            serde_json::Value::Array(stretch.iter().map(|s| to_v(&s.0)).collect()),
            serde_json::Value::Array(bend.iter().map(|s| to_b(&s.0)).collect()),
        ),
    };
    serde_json::to_value(MaterialFile {
        kind: Some(field.kind()),
        grid: GridSpec::current(),
        c,
        b,
    })
    .expect("material serializes")
}

pub fn material_from_json(v: &serde_json::Value) -> Result<MaterialField> {
    let file: MaterialFile = serde_json::from_value(v.clone()).map_err(|e| Error::schema("material", e.to_string()))?;
    if file.grid != GridSpec::current() {
        return Err(Error::schema("material.grid", "sample grid differs from the supported grid"));
    }
    let finite = |x: &[f64]| x.iter().all(|v| v.is_finite());
    match file.kind.unwrap_or(MaterialKind::Homogeneous) {
        MaterialKind::Homogeneous => {
            let c = matrix_from_json::<STRETCH_ROWS, STRETCH_COLS>(&file.c, "material.C")?;
            let b = matrix_from_json::<BEND_ROWS, BEND_COLS>(&file.b, "material.B")?;
            let m = Material {
                stretch: StretchStiffness(c),
                bend: BendStiffness(b),
            };
            if !finite(&m.to_vec()) {
                return Err(Error::schema("material", "non-finite entry"));
            }
            Ok(MaterialField::Homogeneous(m))
        }
        MaterialKind::Heterogeneous => {
            let arr = |v: &serde_json::Value, p: &str| -> Result<Vec<serde_json::Value>> {
                v.as_array().cloned().ok_or_else(|| Error::schema(p, "expected an array of tables"))
            };
            let stretch = arr(&file.c, "material.C")?
                .iter()
                .enumerate()
                .map(|(i, x)| matrix_from_json(x, &format!("material.C[{i}]")).map(StretchStiffness))
                .collect::<Result<Vec<_>>>()?;
            let bend = arr(&file.b, "material.B")?
                .iter()
                .enumerate()
                .map(|(i, x)| matrix_from_json(x, &format!("material.B[{i}]")).map(BendStiffness))
                .collect::<Result<Vec<_>>>()?;
            let field = MaterialField::Heterogeneous { stretch, bend };
            if !finite(&field.flatten()) {
                return Err(Error::schema("material", "non-finite entry"));
            }
            Ok(field)
        }
    }
}

pub fn save_material(field: &MaterialField, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&material_to_json(field))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_material(path: &Path) -> Result<MaterialField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    material_from_json(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;

    fn ramp() -> StretchStiffness {
        let mut c = [[0.0; 4]; 6];
        for (r, row) in c.iter_mut().enumerate() {
            *row = [10.0 + r as f64, 0.1 + 0.05 * r as f64, 20.0 + 3.0 * r as f64, 5.0 + r as f64 * r as f64];
        }
        StretchStiffness(c)
    }

    fn bend_ramp() -> BendStiffness {
        let mut b = [[0.0; 5]; 3];
        for (r, row) in b.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = 1e-5 * (1.0 + r as f64 + 0.5 * k as f64 * k as f64);
            }
        }
        BendStiffness(b)
    }

    #[test]
    fn stretch_nodes_are_exact() {
        let c = ramp();
        for (il, &l) in STRETCH_LAMBDA_GRID.iter().enumerate() {
            for (ip, &p) in STRETCH_PHI_GRID.iter().enumerate() {
                assert_eq!(c.eval(l, p), c.0[il * 3 + ip]);
            }
        }
    }

    #[test]
    fn stretch_midpoint_is_row_mean() {
        let c = ramp();
        let v = c.eval(0.02, FRAC_PI_4 / 2.0);
        for k in 0..4 {
            let mean = 0.5 * (c.0[0][k] + c.0[1][k]);
            assert!((v[k] - mean).abs() < 1e-12 * mean.abs().max(1.0));
        }
    }

    #[test]
    fn stretch_clamps_outside_grid() {
        let c = ramp();
        assert_eq!(c.eval(0.5, 0.3), c.eval(0.10, 0.3));
        assert_eq!(c.eval(-0.5, 0.3), c.eval(0.02, 0.3));
    }

    #[test]
    fn bend_nodes_midpoints_and_symmetry() {
        let b = bend_ramp();
        for (k, &a) in BEND_ALPHA_GRID.iter().enumerate() {
            assert_eq!(b.eval(a, FRAC_PI_4), b.0[1][k]);
            let mid = b.eval(a, FRAC_PI_4 / 2.0);
            assert!((mid - 0.5 * (b.0[0][k] + b.0[1][k])).abs() < 1e-18);
            assert_eq!(b.eval(-a, 0.3), b.eval(a, 0.3));
        }
        assert_eq!(b.eval(100.0, 0.0), b.0[0][4]);
        assert_eq!(b.eval(0.0, FRAC_PI_2), b.0[2][0]);
    }

    #[test]
    fn floors_apply_and_kill_gradients() {
        let mut c = StretchStiffness::uniform(-3.0, 1.5, 10.0, 10.0);
        c.0[0][2] = 10.0;
        let v = c.eval(0.05, 0.2);
        assert_eq!(v[0], STRETCH_FLOOR);
        assert_eq!(v[1], COUPLING_MAX);
        let b = BendStiffness::uniform(-1.0);
        assert_eq!(b.eval(2.0, 0.1), BEND_FLOOR);

        type D = Dual<f64, 1>;
        let mut cd = lift_stretch::<D>(&c);
        cd[0][0] = D::var(-3.0, 0);
        let out = eval_stretch(&cd, D::cst(0.05), D::cst(0.2));
        assert_eq!(out[0].eps[0], 0.0);
    }

    #[test]
    fn interpolation_gradient_matches_finite_differences() {
        type D = Dual<f64, 2>;
        let c = ramp();
        let cd = lift_stretch::<D>(&c);
        let (l, p) = (0.063, 1.1);
        let out = eval_stretch(&cd, D::var(l, 0), D::var(p, 1));
        let h = 1e-7;
        for k in 0..4 {
            let dl = (c.eval(l + h, p)[k] - c.eval(l - h, p)[k]) / (2.0 * h);
            let dp = (c.eval(l, p + h)[k] - c.eval(l, p - h)[k]) / (2.0 * h);
            assert!((out[k].eps[0] - dl).abs() < 1e-5 * dl.abs().max(1.0));
            assert!((out[k].eps[1] - dp).abs() < 1e-5 * dp.abs().max(1.0));
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(MaterialKind::Homogeneous, 10, 10), 39);
        let n = parameter_count(MaterialKind::Heterogeneous, 5226, 7754);
        assert_eq!(n, 241_734);
        assert!(n > 200_000);
    }

    #[test]
    fn flatten_round_trips() {
        let m = Material {
            stretch: ramp(),
            bend: bend_ramp(),
        };
        let f = MaterialField::Homogeneous(m);
        let v = f.flatten();
        assert_eq!(v.len(), 39);
        assert_eq!(MaterialField::unflatten(MaterialKind::Homogeneous, 0, 0, &v).unwrap(), f);

        let h = MaterialField::Heterogeneous {
            stretch: vec![ramp(), StretchStiffness::uniform(1.0, 0.2, 3.0, 4.0)],
            bend: vec![bend_ramp(); 3],
        };
        let v = h.flatten();
        assert_eq!(v.len(), 2 * 24 + 3 * 15);
        assert_eq!(MaterialField::unflatten(MaterialKind::Heterogeneous, 2, 3, &v).unwrap(), h);
        assert!(MaterialField::unflatten(MaterialKind::Heterogeneous, 2, 3, &v[1..]).is_err());
        assert!(MaterialField::unflatten(MaterialKind::Homogeneous, 0, 0, &[1.0; 38]).is_err());
        assert_eq!(h.bend_offset(1), 48 + 15);
    }

    #[test]
    fn json_round_trip() {
        let f = MaterialField::Homogeneous(Material {
            stretch: ramp(),
            bend: bend_ramp(),
        });
        assert_eq!(material_from_json(&material_to_json(&f)).unwrap(), f);
        let h = MaterialField::tied(&Material::uniform(50.0, 0.3, 1e-4), 3, 2);
        assert_eq!(material_from_json(&material_to_json(&h)).unwrap(), h);

        let mut bad = material_to_json(&f);
        bad["grid"]["alpha"] = serde_json::json!([1.0, 2.0]);
        assert!(matches!(material_from_json(&bad), Err(Error::Schema { .. })));
    }
}
