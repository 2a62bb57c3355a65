//! Order-parameter geometry: the n-hat field and the rotation matrix R(n, theta).

use crate::error::{Error, Result};

/// Rotation angle of the B-phase order parameter, cos(theta) = -1/4.
pub fn leggett_angle() -> f64 {
    (-0.25f64).acos()
}

/// Cartesian n-hat of an axisymmetric texture at azimuth `phi`.
///
/// The transverse part co-rotates with phi: its azimuth in the lab frame is `phi + alpha`.
pub fn nhat_field(alpha: f64, beta: f64, phi: f64) -> [f64; 3] {
    let (sb, cb) = beta.sin_cos();
    let (sp, cp) = (phi + alpha).sin_cos();
    [sb * cp, sb * sp, cb]
}

/// `R_ij = cos(theta) d_ij + (1 - cos(theta)) n_i n_j - sin(theta) e_ijk n_k`.
pub fn rotation_matrix(n: [f64; 3], theta: f64) -> Result<[[f64; 3]; 3]> {
    let norm2 = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
    if !((norm2.sqrt() - 1.0).abs() <= 1e-10) {
        return Err(Error::Domain(format!(
            "rotation axis must be a unit vector, |n|^2 = {norm2}"
        )));
    }
    let (s, c) = theta.sin_cos();
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (1.0 - c) * n[i] * n[j] + if i == j { c } else { 0.0 };
        }
    }
    // -sin(theta) e_ijk n_k
    m[0][1] -= s * n[2];
    m[1][0] += s * n[2];
    m[1][2] -= s * n[0];
    m[2][1] += s * n[0];
    m[2][0] -= s * n[1];
    m[0][2] += s * n[1];
    Ok(m)
}
