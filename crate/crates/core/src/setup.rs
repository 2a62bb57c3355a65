//! Fixed experimental context shared by the forward model, fits and scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::material::{GapKind, GapModel, MaterialState, MaterialTable};
use crate::nmr::{synthesize, Spectrum, GAMMA_HE3};
use crate::texture::{
    initial_guess, minimize, Branch, RadialGrid, SolverOptions, Texture, DEFAULT_STEP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    /// Cell radius, m.
    pub radius: f64,
    /// Pressure, bar.
    pub pressure: f64,
    /// Excitation frequency, Hz. The static field is the matching Larmor field.
    pub nu_rf: f64,
    pub gap: GapKind,
    pub table: MaterialTable,
    /// Radial grid step, m.
    pub step: f64,
    pub solver: SolverOptions,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            radius: 3e-3,
            pressure: 29.0,
            nu_rf: 965e3,
            gap: GapKind::Scaled,
            table: MaterialTable::default_table(),
            step: DEFAULT_STEP,
            solver: SolverOptions::default(),
        }
    }
}

impl Setup {
    /// Larmor field, T.
    pub fn field(&self) -> f64 {
        self.nu_rf / GAMMA_HE3
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.radius, self.step)
    }

    pub fn material(&self, t: f64, lambda_hv: Option<f64>) -> Result<MaterialState> {
        let gap = GapModel::from_kind(self.gap, self.table.gap.correction.clone());
        MaterialState::new(t, self.pressure, gap, &self.table, lambda_hv)
    }

    pub fn flow(&self, omega: f64, omega_v: f64) -> Result<FlowState> {
        FlowState::new(omega, omega_v, self.radius)
    }

    /// Converged texture from `start`; non-convergence is an error.
    pub fn relax(&self, start: &Texture, mat: &MaterialState, flow: &FlowState) -> Result<Texture> {
        let tex = minimize(start, mat, flow, self.field(), &self.solver)?;
        if !tex.converged {
            return Err(Error::Unconverged {
                iterations: tex.iterations,
                grad_norm: tex.grad_norm,
            });
        }
        Ok(tex)
    }

    /// Converged texture from the straight-line guess of `branch`.
    pub fn solve(&self, branch: Branch, mat: &MaterialState, flow: &FlowState) -> Result<Texture> {
        self.relax(&initial_guess(branch, self.grid()?), mat, flow)
    }

    /// Normalized, broadened reduced-axis spectrum of a texture.
    pub fn spectrum(&self, tex: &Texture, mat: &MaterialState, dh_over_h: f64) -> Result<Spectrum> {
        synthesize(tex, dh_over_h, self.nu_rf, mat.leggett_freq)
    }
}
