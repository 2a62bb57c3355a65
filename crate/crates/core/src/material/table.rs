//! Tabulated material parameters.
//!
//! The parameter file is TOML. Each `[[pressure]]` block holds the Fermi-liquid
//! constants and the textural coefficients for one pressure as `(T/Tc, value)`
//! pairs; `[gap]` holds the strong-coupling correction and `[leggett]` the
//! longitudinal-resonance fit coefficients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear table `x -> y`, clamped outside its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Table1D {
    points: Vec<(f64, f64)>,
}

impl Table1D {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Table("empty table".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Table("non-finite table entry".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Table(
                "table abscissae must be strictly increasing".into(),
            ));
        }
        Ok(Table1D { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.points;
        if x <= p[0].0 {
            return p[0].1;
        }
        if x >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let i = p.partition_point(|&(px, _)| px <= x);
        let (x0, y0) = p[i - 1];
        let (x1, y1) = p[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for Table1D {
    type Error = Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Table1D::new(v)
    }
}

impl From<Table1D> for Vec<(f64, f64)> {
    fn from(t: Table1D) -> Self {
        t.points
    }
}

/// Fermi-liquid constants and bulk properties at one pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FermiLiquidParams {
    #[serde(rename = "F0a")]
    pub f0a: f64,
    #[serde(rename = "F1s")]
    pub f1s: f64,
    #[serde(rename = "F2a")]
    pub f2a: f64,
    /// m*/m
    pub effective_mass_ratio: f64,
    /// kg/m^3
    pub density: f64,
    /// gamma/2pi in MHz/T
    #[serde(default = "default_gamma")]
    pub gyromagnetic_ratio: f64,
}

fn default_gamma() -> f64 {
    -32.435
}

impl FermiLiquidParams {
    /// Values used for the 29 bar default table.
    pub fn bar29() -> Self {
        FermiLiquidParams {
            f0a: -0.75,
            f1s: 13.56,
            f2a: 0.0,
            effective_mass_ratio: 5.52,
            density: 115.6,
            gyromagnetic_ratio: -32.435,
        }
    }
}

/// Textural free-energy coefficients at a given (T, p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TexturalCoefficients {
    /// J/(m^3 T^2)
    pub a: f64,
    /// kg/m^3
    pub lambda_dv: f64,
    /// J/m
    pub lambda_g1: f64,
    /// J/m
    pub lambda_g2: f64,
    /// J/(m^2 T^2)
    pub d: f64,
    /// kg/(m^3 T^2)
    pub lambda_hv: f64,
    /// Surface-gradient coefficient, J/m.
    #[serde(default)]
    pub lambda_sg: f64,
}

impl TexturalCoefficients {
    pub fn zero() -> Self {
        TexturalCoefficients {
            a: 0.0,
            lambda_dv: 0.0,
            lambda_g1: 0.0,
            lambda_g2: 0.0,
            d: 0.0,
            lambda_hv: 0.0,
            lambda_sg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureSection {
    pub bar: f64,
    /// Transition temperature in K.
    pub tc: f64,
    #[serde(flatten)]
    pub fl: FermiLiquidParams,
    pub a: Table1D,
    #[serde(rename = "lambda_DV")]
    pub lambda_dv: Table1D,
    #[serde(rename = "lambda_G1")]
    pub lambda_g1: Table1D,
    #[serde(rename = "lambda_G2")]
    pub lambda_g2: Table1D,
    pub d: Table1D,
    #[serde(rename = "lambda_SG", default, skip_serializing_if = "Option::is_none")]
    pub lambda_sg: Option<Table1D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSection {
    pub correction: Table1D,
}

/// Coefficients of `(Omega_B/2pi)^2 = (1-T^4)(a - b T^4 + c T^6) 1e10` in Hz^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeggettCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for LeggettCoefficients {
    fn default() -> Self {
        LeggettCoefficients {
            a: 8.73312,
            b: 13.32121,
            c: 1.51919,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialTable {
    pub pressure: Vec<PressureSection>,
    pub gap: GapSection,
    #[serde(default)]
    pub leggett: LeggettCoefficients,
}

/// Bundled 29 bar table.
pub const DEFAULT_TABLE: &str = include_str!("../../data/he3b_29bar.toml");

impl MaterialTable {
    pub fn default_table() -> Self {
        Self::from_toml_str(DEFAULT_TABLE).expect("bundled table parses")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut table: MaterialTable = toml::from_str(s).map_err(|e| {
            let msg = e.message().to_string();
            if let Some(key) = msg
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
            {
                Error::MissingKey(key.to_string())
            } else {
                Error::Table(e.to_string())
            }
        })?;
        if table.pressure.is_empty() {
            return Err(Error::Table("no [[pressure]] sections".into()));
        }
        table.pressure.sort_by(|a, b| a.bar.total_cmp(&b.bar));
        if table.pressure.windows(2).any(|w| w[0].bar == w[1].bar) {
            return Err(Error::Table("duplicate pressure section".into()));
        }
        Ok(table)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn pressure_range(&self) -> (f64, f64) {
        (
            self.pressure[0].bar,
            self.pressure[self.pressure.len() - 1].bar,
        )
    }

    /// Bracketing sections and the linear weight of the upper one.
    fn bracket(&self, p: f64) -> Result<(&PressureSection, &PressureSection, f64)> {
        let (min, max) = self.pressure_range();
        let tol = 1e-9 * max.abs().max(1.0);
        if !(p >= min - tol && p <= max + tol) {
            return Err(Error::PressureOutOfRange {
                pressure: p,
                min,
                max,
            });
        }
        let secs = &self.pressure;
        if secs.len() == 1 {
            return Ok((&secs[0], &secs[0], 0.0));
        }
        let i = secs
            .partition_point(|s| s.bar <= p)
            .clamp(1, secs.len() - 1);
        let (lo, hi) = (&secs[i - 1], &secs[i]);
        let w = ((p - lo.bar) / (hi.bar - lo.bar)).clamp(0.0, 1.0);
        Ok((lo, hi, w))
    }

    /// Textural coefficients at (T, p); `lambda_hv` is left at zero for the caller.
    pub fn coefficients(&self, t: f64, p: f64) -> Result<TexturalCoefficients> {
        let (lo, hi, w) = self.bracket(p)?;
        let mix =
            |f: fn(&PressureSection) -> &Table1D| (1.0 - w) * f(lo).eval(t) + w * f(hi).eval(t);
        Ok(TexturalCoefficients {
            a: mix(|s| &s.a),
            lambda_dv: mix(|s| &s.lambda_dv),
            lambda_g1: mix(|s| &s.lambda_g1),
            lambda_g2: mix(|s| &s.lambda_g2),
            d: mix(|s| &s.d),
            lambda_hv: 0.0,
            lambda_sg: {
                let sg = |s: &PressureSection| s.lambda_sg.as_ref().map_or(0.0, |tab| tab.eval(t));
                (1.0 - w) * sg(lo) + w * sg(hi)
            },
        })
    }

    pub fn fermi_liquid(&self, p: f64) -> Result<FermiLiquidParams> {
        let (lo, hi, w) = self.bracket(p)?;
        let m = |x: f64, y: f64| (1.0 - w) * x + w * y;
        Ok(FermiLiquidParams {
            f0a: m(lo.fl.f0a, hi.fl.f0a),
            f1s: m(lo.fl.f1s, hi.fl.f1s),
            f2a: m(lo.fl.f2a, hi.fl.f2a),
            effective_mass_ratio: m(lo.fl.effective_mass_ratio, hi.fl.effective_mass_ratio),
            density: m(lo.fl.density, hi.fl.density),
            gyromagnetic_ratio: lo.fl.gyromagnetic_ratio,
        })
    }

    /// T_c in kelvin.
    pub fn tc(&self, p: f64) -> Result<f64> {
        let (lo, hi, w) = self.bracket(p)?;
        Ok((1.0 - w) * lo.tc + w * hi.tc)
    }
}

/// Coefficients at (T, p) with `lambda_HV` either computed by `lambda_hv` or overridden.
pub fn load_material_table(
    table: &MaterialTable,
    t: f64,
    pressure: f64,
    lambda_hv: impl FnOnce() -> Result<f64>,
    lambda_hv_override: Option<f64>,
) -> Result<TexturalCoefficients> {
    let mut c = table.coefficients(t, pressure)?;
    c.lambda_hv = match lambda_hv_override {
        Some(v) => v,
        None => lambda_hv()?,
    };
    Ok(c)
}
