//! Energy-gap models in units of k_B T_c.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::table::Table1D;
use crate::error::{Error, Result};

/// Zero-temperature weak-coupling gap at 29 bar.
pub const WEAK_COUPLING_ZERO: f64 = 1.79;
/// Zero-temperature strong-coupling corrected gap at 29 bar.
pub const STRONG_COUPLING_ZERO: f64 = 1.87;
/// Zero-temperature gap from the measured low-temperature limit.
pub const SCALED_ZERO: f64 = 1.97;

/// BCS value pi e^(-gamma_E) of Delta(0)/(k_B T_c).
pub const BCS_ZERO: f64 = 1.763_876_988_862_046;

const GRID_POINTS: usize = 2001;
const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Below this reduced temperature the BCS gap differs from Delta(0) by < 1e-15.
const LOW_T_CUTOFF: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    WeakCoupling,
    StrongCoupling,
    Scaled,
}

impl std::str::FromStr for GapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak_coupling" | "wc" => Ok(GapKind::WeakCoupling),
            "strong_coupling" | "sc" => Ok(GapKind::StrongCoupling),
            "scaled" => Ok(GapKind::Scaled),
            other => Err(Error::Domain(format!("unknown gap model `{other}`"))),
        }
    }
}

/// Temperature dependence of the superfluid gap.
///
/// All three models share the weak-coupling BCS shape. The strong-coupling
/// model multiplies it by a tabulated correction `c(T)`; the scaled model
/// rescales the strong-coupling gap so that it reaches `zero_t_value` at T = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapModel {
    pub kind: GapKind,
    pub zero_t_value: f64,
    pub correction: Option<Table1D>,
}

impl GapModel {
    pub fn weak_coupling() -> Self {
        GapModel {
            kind: GapKind::WeakCoupling,
            zero_t_value: WEAK_COUPLING_ZERO,
            correction: None,
        }
    }

    pub fn strong_coupling(correction: Table1D) -> Self {
        let zero = WEAK_COUPLING_ZERO * correction.eval(0.0);
        GapModel {
            kind: GapKind::StrongCoupling,
            zero_t_value: zero,
            correction: Some(correction),
        }
    }

    pub fn scaled(correction: Table1D) -> Self {
        GapModel {
            kind: GapKind::Scaled,
            zero_t_value: SCALED_ZERO,
            correction: Some(correction),
        }
    }

    /// Correction table that turns the 1.79 weak-coupling gap into 1.87 at all T.
    pub fn uniform_correction() -> Table1D {
        let c = STRONG_COUPLING_ZERO / WEAK_COUPLING_ZERO;
        Table1D::new(vec![(0.0, c), (1.0, c)]).expect("static table")
    }

    pub fn from_kind(kind: GapKind, correction: Table1D) -> Self {
        match kind {
            GapKind::WeakCoupling => Self::weak_coupling(),
            GapKind::StrongCoupling => Self::strong_coupling(correction),
            GapKind::Scaled => Self::scaled(correction),
        }
    }

    /// Gap at reduced temperature `t` in units of k_B T_c.
    pub fn gap(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("gap requires 0 < T <= 1, got {t}")));
        }
        let shape = bcs_shape(t)?;
        let corr = |c: &Option<Table1D>| c.as_ref().map_or(1.0, |tab| tab.eval(t));
        let corr0 = |c: &Option<Table1D>| c.as_ref().map_or(1.0, |tab| tab.eval(0.0));
        Ok(match self.kind {
            GapKind::WeakCoupling => self.zero_t_value * shape,
            GapKind::StrongCoupling => WEAK_COUPLING_ZERO * shape * corr(&self.correction),
            GapKind::Scaled => {
                self.zero_t_value * shape * corr(&self.correction) / corr0(&self.correction)
            }
        })
    }
}

/// Weak-coupling gap normalized to one at T = 0, from the cached BCS solution.
pub fn bcs_shape(t: f64) -> Result<f64> {
    if t >= 1.0 {
        return Ok(0.0);
    }
    let cache = bcs_cache()?;
    Ok(cache.eval(t).max(0.0).sqrt() / BCS_ZERO)
}

struct GapCache {
    // Delta^2 on the uniform grid, interpolated with monotone cubics.
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl GapCache {
    fn eval(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let h = 1.0 / n as f64;
        let pos = (t / h).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let s = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        y0 + (y1 - y0) * (3.0 * s2 - 2.0 * s3) + (s3 - 2.0 * s2 + s) * m0 + (s3 - s2) * m1
    }
}

fn bcs_cache() -> Result<&'static GapCache> {
    static CACHE: OnceLock<std::result::Result<GapCache, String>> = OnceLock::new();
    CACHE
        .get_or_init(|| build_cache().map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Domain(e.clone()))
}

fn build_cache() -> Result<GapCache> {
    let n = GRID_POINTS - 1;
    let h = 1.0 / n as f64;
    let mut values = Vec::with_capacity(GRID_POINTS);
    for k in 0..=n {
        let t = k as f64 * h;
        let d = solve_bcs_gap(t)?;
        values.push(d * d);
    }
    let slopes = pchip_slopes(&values, h);
    Ok(GapCache { values, slopes })
}

/// Fritsch-Carlson slopes; keep the interpolant monotone where the data are.
fn pchip_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            m[i] = 2.0 / (1.0 / delta[i - 1] + 1.0 / delta[i]);
        }
    }
    m
}

/// `2 pi t sum_{n>=0} [1/w_n - 1/sqrt(w_n^2 + D^2)] - ln(1/t)`, increasing in `D`.
pub(crate) fn bcs_residual(t: f64, gap: f64) -> f64 {
    let step = 2.0 * PI * t;
    let mut sum = 0.0;
    let mut n = 0usize;
    loop {
        let w = PI * t * (2 * n + 1) as f64;
        if w > 100.0 * gap.max(1e-3) && n > 8 {
            break;
        }
        sum += 1.0 / w - 1.0 / (w * w + gap * gap).sqrt();
        n += 1;
    }
    // Remaining terms by the midpoint rule with its leading Euler-Maclaurin correction:
    // sum g(w_k) = (1/s) int_L^inf g + (s/24) g'(L), L = w_n - s/2.
    let lower = PI * t * (2 * n + 1) as f64 - 0.5 * step;
    let q = (gap / lower).powi(2);
    let tail = (0.5 * (1.0 + (1.0 + q).sqrt())).ln();
    let slope = -1.0 / (lower * lower) + lower / (lower * lower + gap * gap).powf(1.5);
    sum += tail / step + step / 24.0 * slope;
    step * sum - (1.0 / t).ln()
}

/// Self-consistent weak-coupling BCS gap by bisection.
pub fn solve_bcs_gap(t: f64) -> Result<f64> {
    if t >= 1.0 {
        return Ok(0.0);
    }
    if t < LOW_T_CUTOFF {
        return Ok(BCS_ZERO);
    }
    let (mut lo, mut hi) = (0.0, BCS_ZERO * 1.01);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = bcs_residual(t, mid);
        if r.abs() < RESIDUAL_TOLERANCE && hi - lo < 1e-13 {
            return Ok(mid);
        }
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let residual = bcs_residual(t, mid);
    if residual.abs() < RESIDUAL_TOLERANCE {
        Ok(mid)
    } else {
        Err(Error::GapNonConvergence { t, residual })
    }
}
