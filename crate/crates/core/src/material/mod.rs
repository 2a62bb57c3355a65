//! Temperature- and pressure-dependent material parameters of 3He-B.

pub mod gap;
pub mod matsubara;
pub mod table;

use serde::{Deserialize, Serialize};

pub use gap::{GapKind, GapModel};
pub use matsubara::{matsubara_z, yosida};
pub use table::{
    load_material_table, FermiLiquidParams, LeggettCoefficients, MaterialTable, Table1D,
    TexturalCoefficients,
};

use crate::error::{Error, Result};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;

/// The bracketed Matsubara combination that controls the flow anisotropy.
pub fn lambda_hv_bracket(t: f64, gap: f64, f2a: f64) -> Result<f64> {
    let z3 = matsubara_z(3, t, gap)?;
    let z5 = matsubara_z(5, t, gap)?;
    let z7 = matsubara_z(7, t, gap)?;
    if z3 <= 0.0 {
        return Err(Error::Domain("Z_3 vanishes; lambda_HV undefined".into()));
    }
    Ok(z3 - 0.9 * z5 + 0.9 * z5 * z5 / z3 - 1.5 * z7
        + 3.0 * f2a * z3 / (50.0 * (1.0 + 0.2 * f2a)) * (3.0 * z5 - 2.0 * z3))
}

/// Field-velocity coefficient in kg/(m^3 T^2).
///
/// `gap` is in units of k_B T_c and `tc` in kelvin; the field enters as
/// flux density, so no separate mu_0 factor appears.
pub fn lambda_hv(t: f64, fl: &FermiLiquidParams, gap: f64, tc: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!(
            "lambda_HV requires 0 < T < 1, got {t}"
        )));
    }
    if !(gap > 0.0) {
        return Err(Error::Domain("lambda_HV requires a non-zero gap".into()));
    }
    let y = yosida(t, gap)?;
    let gap_joule = gap * K_B * tc;
    let gamma = 2.0 * std::f64::consts::PI * fl.gyromagnetic_ratio.abs() * 1e6;
    let prefactor = fl.density / (gap_joule * gap_joule) * fl.effective_mass_ratio
        / (1.0 + fl.f1s * y / 3.0).powi(2);
    let numerator = 0.5 * HBAR * gamma * (1.0 + 0.2 * fl.f2a);
    let denominator = 1.0
        + fl.f0a * (2.0 / 3.0 + y / 3.0)
        + 0.2 * fl.f2a * (1.0 / 3.0 + (2.0 / 3.0 + fl.f0a) * y);
    let bracket = lambda_hv_bracket(t, gap, fl.f2a)?;
    Ok((prefactor * (numerator / denominator).powi(2) * bracket).max(0.0))
}

/// chi_B / chi_N from the Yosida function.
pub fn susceptibility_ratio(t: f64, gap: f64, f0a: f64) -> Result<f64> {
    if !(f0a > -1.0 && f0a <= 0.0) {
        return Err(Error::Domain(format!(
            "susceptibility requires -1 < F0a <= 0, got {f0a}"
        )));
    }
    let y = yosida(t, gap)?;
    Ok(susceptibility_from_yosida(y, f0a))
}

pub fn susceptibility_from_yosida(y: f64, f0a: f64) -> f64 {
    let s = 2.0 / 3.0 + y / 3.0;
    (1.0 + f0a) * s / (1.0 + f0a * s)
}

/// Longitudinal resonance frequency Omega_B/2pi in Hz.
pub fn leggett_frequency(t: f64, c: &LeggettCoefficients) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!(
            "Leggett frequency requires 0 <= T <= 1, got {t}"
        )));
    }
    let t4 = t.powi(4);
    let value = (1.0 - t4) * (c.a - c.b * t4 + c.c * t4 * t * t) * 1e10;
    if value < 0.0 {
        return Err(Error::NegativeRadicand { t, value });
    }
    Ok(value.sqrt())
}

/// All material quantities for one (T, p, gap model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialState {
    pub t: f64,
    pub pressure: f64,
    pub tc: f64,
    pub gap_model: GapModel,
    pub gap: f64,
    pub fl: FermiLiquidParams,
    pub coeffs: TexturalCoefficients,
    pub lambda_hv_overridden: bool,
    /// Omega_B / 2pi in Hz.
    pub leggett_freq: f64,
}

impl MaterialState {
    pub fn new(
        t: f64,
        pressure: f64,
        gap_model: GapModel,
        table: &MaterialTable,
        lambda_hv_override: Option<f64>,
    ) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("T/Tc must be in (0, 1], got {t}")));
        }
        let gap = gap_model.gap(t)?;
        let fl = table.fermi_liquid(pressure)?;
        let tc = table.tc(pressure)?;
        let coeffs = load_material_table(
            table,
            t,
            pressure,
            || {
                if gap > 0.0 && t < 1.0 {
                    lambda_hv(t, &fl, gap, tc)
                } else {
                    Ok(0.0)
                }
            },
            lambda_hv_override,
        )?;
        let leggett_freq = leggett_frequency(t, &table.leggett)?;
        Ok(MaterialState {
            t,
            pressure,
            tc,
            gap_model,
            gap,
            fl,
            coeffs,
            lambda_hv_overridden: lambda_hv_override.is_some(),
            leggett_freq,
        })
    }

    /// Default 29 bar table with the scaled gap.
    pub fn at_29_bar(t: f64, lambda_hv_override: Option<f64>) -> Result<Self> {
        let table = MaterialTable::default_table();
        let gap = GapModel::scaled(table.gap.correction.clone());
        Self::new(t, 29.0, gap, &table, lambda_hv_override)
    }

    /// Same state with all textural coefficients replaced.
    pub fn with_coeffs(mut self, coeffs: TexturalCoefficients) -> Self {
        self.coeffs = coeffs;
        self
    }

    pub fn yosida(&self) -> Result<f64> {
        yosida(self.t, self.gap)
    }

    pub fn susceptibility_ratio(&self) -> Result<f64> {
        susceptibility_ratio(self.t, self.gap, self.fl.f0a)
    }
}
