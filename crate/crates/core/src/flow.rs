//! Azimuthal counterflow around a central vortex cluster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circulation quantum h/(2 m_3) in m^2/s.
pub const KAPPA: f64 = 6.62e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Rotation velocity, rad/s.
    pub omega: f64,
    /// Rotation velocity at which the cluster would be in equilibrium, rad/s.
    pub omega_v: f64,
    /// Cell radius, m.
    pub radius: f64,
    pub kappa: f64,
    pub vortex_count: u64,
}

impl FlowState {
    pub fn new(omega: f64, omega_v: f64, radius: f64) -> Result<Self> {
        Self::with_kappa(omega, omega_v, radius, KAPPA)
    }

    pub fn with_kappa(omega: f64, omega_v: f64, radius: f64, kappa: f64) -> Result<Self> {
        if !(omega.is_finite() && omega_v.is_finite()) || omega_v < 0.0 || omega < 0.0 {
            return Err(Error::Domain(format!(
                "rotation velocities must be finite and non-negative (omega={omega}, omega_v={omega_v})"
            )));
        }
        if omega_v > omega {
            return Err(Error::Domain(format!(
                "omega_v={omega_v} exceeds omega={omega}"
            )));
        }
        let vortex_count = equilibrium_vortex_number(omega_v, radius, kappa)?;
        Ok(FlowState {
            omega,
            omega_v,
            radius,
            kappa,
            vortex_count,
        })
    }

    /// Vortex-free rotation.
    pub fn vortex_free(omega: f64, radius: f64) -> Result<Self> {
        Self::new(omega, 0.0, radius)
    }

    pub fn cluster_radius(&self) -> f64 {
        if self.omega == 0.0 {
            0.0
        } else {
            self.radius * (self.omega_v / self.omega).sqrt()
        }
    }
}

pub fn equilibrium_vortex_number(omega_v: f64, radius: f64, kappa: f64) -> Result<u64> {
    if !(omega_v >= 0.0 && radius > 0.0 && kappa > 0.0) {
        return Err(Error::Domain(format!(
            "vortex number needs omega_v >= 0, R > 0, kappa > 0 (got {omega_v}, {radius}, {kappa})"
        )));
    }
    Ok((2.0 * std::f64::consts::PI * radius * radius * omega_v / kappa).round() as u64)
}

/// `v_n - v_s` along phi-hat at radius `r`, m/s. Exactly zero inside the cluster.
pub fn counterflow(r: f64, flow: &FlowState) -> Result<f64> {
    // Tolerate grid round-off at the wall.
    if !(r >= 0.0 && r <= flow.radius * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("r={r} outside [0, {}]", flow.radius)));
    }
    if r <= flow.cluster_radius() || flow.omega_v == flow.omega {
        return Ok(0.0);
    }
    let ratio = flow.radius / r;
    Ok(((flow.omega - flow.omega_v * ratio * ratio) * r).max(0.0))
}

pub fn counterflow_profile(flow: &FlowState, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    grid.iter().map(|&r| counterflow(r, flow)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R: f64 = 3e-3;

    #[test]
    fn vortex_numbers() {
        assert_eq!(equilibrium_vortex_number(0.0, R, KAPPA).unwrap(), 0);
        // 2 pi 9e-6 / 6.62e-8 = 854.2
        assert_eq!(equilibrium_vortex_number(1.0, R, KAPPA).unwrap(), 854);
        assert_eq!(equilibrium_vortex_number(0.1, R, KAPPA).unwrap(), 85);
        assert!(equilibrium_vortex_number(0.1, 0.0, KAPPA).is_err());
    }

    #[test]
    fn solid_body_and_equilibrium() {
        let f = FlowState::vortex_free(0.9, R).unwrap();
        assert!((counterflow(R, &f).unwrap() - 2.7e-3).abs() < 1e-15);
        let eq = FlowState::new(0.7, 0.7, R).unwrap();
        for k in 0..=10 {
            assert_eq!(counterflow(R * k as f64 / 10.0, &eq).unwrap(), 0.0);
        }
    }

    #[test]
    fn three_point_profile() {
        let f = FlowState::new(0.9, 0.1, R).unwrap();
        let rc = f.cluster_radius();
        let v = counterflow_profile(&f, &[0.0, rc, R]).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.8 * R).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_states() {
        assert!(FlowState::new(0.0, 0.1, R).is_err());
        assert!(FlowState::new(0.5, 0.6, R).is_err());
        let f = FlowState::new(0.5, 0.1, R).unwrap();
        assert!(counterflow(1.01 * R, &f).is_err());
        assert!(counterflow_profile(&f, &[0.0, 0.0]).is_err());
        assert_eq!(FlowState::new(0.0, 0.0, R).unwrap().cluster_radius(), 0.0);
    }

    #[test]
    fn vortex_free_profile_increases() {
        let f = FlowState::vortex_free(0.4, R).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| R * k as f64 / 50.0).collect();
        let v = counterflow_profile(&f, &grid).unwrap();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #[test]
        fn continuous_at_cluster_edge(omega in 0.01f64..3.0, frac in 0.0f64..1.0) {
            let f = FlowState::new(omega, omega * frac, R).unwrap();
            let rc = f.cluster_radius();
            let outside = counterflow((rc * (1.0 + 1e-9)).min(R), &f).unwrap();
            // Slope just outside the edge is 2 omega.
            prop_assert!(outside.abs() < 2.5e-9 * omega * R + 1e-15);
        }

        #[test]
        fn maximum_at_wall(omega in 0.01f64..3.0, frac in 0.0f64..0.99) {
            let f = FlowState::new(omega, omega * frac, R).unwrap();
            let grid: Vec<f64> = (0..=100).map(|k| R * k as f64 / 100.0).collect();
            let v = counterflow_profile(&f, &grid).unwrap();
            let max = v.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(max, v[100]);
        }

        #[test]
        fn monotone_in_omega_and_omega_v(
            omega in 0.05f64..2.0, d in 0.0f64..1.0, frac in 0.0f64..1.0, r in 0.0f64..1.0,
        ) {
            let r = r * R;
            let ov = omega * frac;
            let a = counterflow(r, &FlowState::new(omega, ov, R).unwrap()).unwrap();
            let b = counterflow(r, &FlowState::new(omega + d, ov, R).unwrap()).unwrap();
            prop_assert!(b >= a - 1e-18);
            let ov2 = (ov + d).min(omega);
            let c = counterflow(r, &FlowState::new(omega, ov2, R).unwrap()).unwrap();
            prop_assert!(c <= a + 1e-18);
        }

        #[test]
        fn scaling_is_exact(omega in 0.05f64..2.0, frac in 0.0f64..1.0, c in 0.1f64..4.0, r in 0.0f64..1.0) {
            let r = r * R;
            let a = counterflow(r, &FlowState::new(omega, omega * frac, R).unwrap()).unwrap();
            let b = counterflow(r, &FlowState::new(c * omega, c * omega * frac, R).unwrap()).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-12 * (c * a).abs() + 1e-18);
        }
    }
}
