//! Gravity and the handle springs that hold the support region.

use crate::mesh::Pin;

/// Standard gravity used by the drape tests (m/s^2).
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.8];

/// Default handle stiffness (N/m).
pub const DEFAULT_HANDLE_STIFFNESS: f64 = 1e4;

/// `m_k g` per vertex; constant in time, zero Jacobian.
pub fn gravity_force(masses: &[f64], g: [f64; 3]) -> Vec<[f64; 3]> {
    masses.iter().map(|m| [m * g[0], m * g[1], m * g[2]]).collect()
}

/// Restoring springs `-k_h (x - anchor)` on pinned vertices; their Jacobian
/// is `-k_h I` on the pinned diagonal blocks.
pub fn handle_force(x: &[[f64; 3]], pins: &[Pin], k_h: f64) -> Vec<[f64; 3]> {
    let mut f = vec![[0.0; 3]; x.len()];
    for p in pins {
        for c in 0..3 {
            f[p.vertex][c] = -k_h * (x[p.vertex][c] - p.anchor[c]);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gravity_on_a_vertex() {
        let f = gravity_force(&[0.003, 0.0], GRAVITY);
        assert_eq!(f[0][0], 0.0);
        assert!((f[0][2] + 0.0294).abs() < 1e-15);
        assert_eq!(f[1], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn handle_pulls_back_to_anchor() {
        let pins = [Pin {
            vertex: 0,
            anchor: [0.0, 0.0, 0.0],
        }];
        let x = [[0.0, 0.0, -0.001], [5.0, 5.0, 5.0]];
        let f = handle_force(&x, &pins, 1e4);
        assert!((f[0][2] - 10.0).abs() < 1e-12);
        assert_eq!(f[1], [0.0; 3]);
        let f = handle_force(&[[0.0; 3], [1.0; 3]], &pins, 1e4);
        assert_eq!(f[0], [0.0; 3]);
    }
}
