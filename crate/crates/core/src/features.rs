//! Peak, edge and mismatch measurements on normalized reduced-axis spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmr::{trapezoid, Axis, Spectrum};
use crate::texture::Branch;

pub const CF_WINDOW: (f64, f64) = (0.3, 0.95);
pub const NINETY_WINDOW: (f64, f64) = (0.95, 1.05);
/// Minimum prominence as a fraction of the global maximum.
pub const PROMINENCE_FRACTION: f64 = 0.02;
/// Normalized height above which a cf-peak counts as present.
pub const CF_MIN_HEIGHT: f64 = 1.5;
/// Peaks closer than this are reported as colliding.
const COLLISION_GAP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub height: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeatures {
    pub cf_peak: Option<Peak>,
    pub ninety_peak: Option<Peak>,
    pub edge_shift: Option<f64>,
    /// The cf- and 90-degree peaks are too close to be told apart reliably.
    pub collision: bool,
    pub branch_hint: Branch,
}

impl SpectralFeatures {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("features serialize")
    }
}

fn check(spec: &Spectrum) -> Result<()> {
    if spec.axis != Axis::ReducedShift {
        return Err(Error::AxisMismatch(
            spec.axis.name().into(),
            Axis::ReducedShift.name().into(),
        ));
    }
    if !spec.meta.normalized {
        return Err(Error::Unnormalized);
    }
    Ok(())
}

fn smooth3(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Height above the higher of the two bases reached before climbing to a taller point.
fn prominence(y: &[f64], k: usize) -> f64 {
    let top = y[k];
    let mut left = top;
    for &v in y[..k].iter().rev() {
        if v > top {
            break;
        }
        left = left.min(v);
    }
    let mut right = top;
    for &v in &y[k + 1..] {
        if v > top {
            break;
        }
        right = right.min(v);
    }
    top - left.max(right)
}

/// Prominent local maxima inside `window`, as (index, sub-bin position).
fn maxima(spec: &Spectrum, window: (f64, f64)) -> Vec<(usize, f64)> {
    let s = smooth3(&spec.y);
    let n = s.len();
    let floor = PROMINENCE_FRACTION * s.iter().cloned().fold(0.0, f64::max);
    (1..n - 1)
        .filter(|&k| spec.x[k] > window.0 && spec.x[k] < window.1)
        .filter(|&k| s[k] > s[k - 1] && s[k] >= s[k + 1])
        .filter(|&k| prominence(&s, k) >= floor && s[k] > 0.0)
        .map(|k| {
            let (a, b, c) = (s[k - 1], s[k], s[k + 1]);
            let den = a - 2.0 * b + c;
            let off = if den < 0.0 {
                (0.5 * (a - c) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            let w = 0.5 * (spec.x[k + 1] - spec.x[k - 1]);
            (k, spec.x[k] + off * w)
        })
        .collect()
}

/// Highest prominent maximum in the cf window, if tall enough.
pub fn cf_peak(spec: &Spectrum) -> Result<Option<Peak>> {
    cf_peak_above(spec, CF_MIN_HEIGHT)
}

/// As [`cf_peak`] with a caller-chosen height threshold.
pub fn cf_peak_above(spec: &Spectrum, min_height: f64) -> Result<Option<Peak>> {
    check(spec)?;
    let best = maxima(spec, CF_WINDOW)
        .into_iter()
        .map(|(k, x)| Peak {
            height: spec.y[k],
            position: x,
        })
        .max_by(|a, b| a.height.total_cmp(&b.height));
    Ok(best.filter(|p| p.height >= min_height))
}

/// Prominent maximum nearest a reduced shift of one.
pub fn ninety_degree_peak(spec: &Spectrum) -> Result<Option<Peak>> {
    check(spec)?;
    Ok(maxima(spec, NINETY_WINDOW)
        .into_iter()
        .map(|(k, x)| Peak {
            height: spec.y[k],
            position: x,
        })
        .min_by(|a, b| {
            (a.position - 1.0)
                .abs()
                .total_cmp(&(b.position - 1.0).abs())
        }))
}

/// Baseline intersection of the tangent to the high-shift edge.
///
/// The edge is the last descent of the spectrum: from the end of its support back to where
/// it levels off. The slope is the steeper of the least-squares slope over the five bins
/// around the steepest drop and the drop itself, so an unresolved step is still placed
/// within a bin.
pub fn edge_shift(spec: &Spectrum) -> Result<f64> {
    if !spec.meta.normalized {
        return Err(Error::Unnormalized);
    }
    let (x, y) = (&spec.x, &spec.y);
    let n = x.len();
    let s = smooth3(y);
    let floor = PROMINENCE_FRACTION * s.iter().cloned().fold(0.0, f64::max);
    let end = (0..n).rev().find(|&k| s[k] >= floor).ok_or(Error::NoEdge)?;
    // Climb the edge until it levels off or turns down.
    let mut top = end;
    let mut steepest = 0.0f64;
    while top > 0 {
        let rise = (s[top - 1] - s[top]) / (x[top] - x[top - 1]);
        if rise <= 0.0 || rise < 0.1 * steepest {
            break;
        }
        steepest = steepest.max(rise);
        top -= 1;
    }
    let (k, drop) = (top..=end.min(n - 2))
        .map(|k| (k, (y[k] - y[k + 1]) / (x[k + 1] - x[k])))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::NoEdge)?;
    if !(drop > 0.0) {
        return Err(Error::NoEdge);
    }
    let lo = k.saturating_sub(2).min(n.saturating_sub(5));
    let pts = &x[lo..lo + 5.min(n)];
    let vals = &y[lo..lo + 5.min(n)];
    let mx = pts.iter().sum::<f64>() / pts.len() as f64;
    let my = vals.iter().sum::<f64>() / vals.len() as f64;
    let sxy: f64 = pts.iter().zip(vals).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = pts.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = (sxy / sxx).min(-drop);
    let xm = 0.5 * (x[k] + x[k + 1]);
    let ym = 0.5 * (y[k] + y[k + 1]);
    Ok(xm - ym / slope)
}

/// Both spectra on the union of their abscissae.
fn common(m: &Spectrum, c: &Spectrum) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if m.axis != c.axis {
        return Err(Error::AxisMismatch(
            m.axis.name().into(),
            c.axis.name().into(),
        ));
    }
    if !m.meta.normalized || !c.meta.normalized {
        return Err(Error::Unnormalized);
    }
    if m.x == c.x {
        return Ok((m.x.clone(), m.y.clone(), c.y.clone()));
    }
    let mut x: Vec<f64> = m.x.iter().chain(&c.x).copied().collect();
    x.sort_by(f64::total_cmp);
    x.dedup();
    let ym = x.iter().map(|&v| m.value_at(v)).collect();
    let yc = x.iter().map(|&v| c.value_at(v)).collect();
    Ok((x, ym, yc))
}

/// Integrated absolute difference relative to the measured area.
pub fn area_mismatch(measured: &Spectrum, calculated: &Spectrum) -> Result<f64> {
    let (x, ym, yc) = common(measured, calculated)?;
    let diff: Vec<f64> = ym.iter().zip(&yc).map(|(a, b)| (a - b).abs()).collect();
    let area = trapezoid(&x, &ym);
    if !(area > 0.0) {
        return Err(Error::NonPositiveArea(area));
    }
    Ok(trapezoid(&x, &diff) / area)
}

/// Pointwise |measured - calculated| on the common grid.
pub fn surface_peak_residual(measured: &Spectrum, calculated: &Spectrum) -> Result<Spectrum> {
    let (x, ym, yc) = common(measured, calculated)?;
    let y = ym.iter().zip(&yc).map(|(a, b)| (a - b).abs()).collect();
    let mut meta = measured.meta;
    meta.normalized = false;
    Spectrum::new(measured.axis, x, y, meta)
}

pub fn extract(spec: &Spectrum) -> Result<SpectralFeatures> {
    let cf = cf_peak(spec)?;
    let ninety = ninety_degree_peak(spec)?;
    let collision = match (cf, ninety) {
        (Some(a), Some(b)) => (b.position - a.position).abs() < COLLISION_GAP,
        (Some(a), None) => a.position > CF_WINDOW.1 - COLLISION_GAP,
        _ => false,
    };
    let branch_hint = match (cf, ninety) {
        (_, Some(_)) => Branch::Extended,
        (Some(_), None) => Branch::Parted,
        _ => Branch::Simple,
    };
    Ok(SpectralFeatures {
        cf_peak: cf,
        ninety_peak: ninety,
        edge_shift: edge_shift(spec).ok(),
        collision,
        branch_hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmr::{normalize, SpectrumMeta, SPECTRUM_BINS, SPECTRUM_RANGE};
    use approx::assert_relative_eq;

    fn from_fn(f: impl Fn(f64) -> f64) -> Spectrum {
        let x = Spectrum::uniform_axis(SPECTRUM_BINS, SPECTRUM_RANGE);
        let y = x.iter().map(|&v| f(v)).collect();
        normalize(&Spectrum::new(Axis::ReducedShift, x, y, SpectrumMeta::default()).unwrap())
            .unwrap()
    }

    fn lorentz(x: f64, c: f64, g: f64) -> f64 {
        g / ((x - c).powi(2) + g * g)
    }

    #[test]
    fn rectangle_edge() {
        let sp = from_fn(|x| if (0.0..=0.8).contains(&x) { 1.0 } else { 0.0 });
        let w = 1.1 / SPECTRUM_BINS as f64;
        assert!((edge_shift(&sp).unwrap() - 0.8).abs() <= w);
        assert!(cf_peak(&sp).unwrap().is_none());
    }

    #[test]
    fn finds_cf_and_ninety_peaks() {
        let sp = from_fn(|x| {
            if (0.0..1.0).contains(&x) {
                0.3 + 0.05 * lorentz(x, 0.8, 0.01) + 0.02 * lorentz(x, 1.0, 0.01)
            } else {
                0.0
            }
        });
        let cf = cf_peak(&sp).unwrap().unwrap();
        assert!((cf.position - 0.8).abs() < 1e-3, "{cf:?}");
        let n = ninety_degree_peak(&sp).unwrap().unwrap();
        assert!((n.position - 1.0).abs() < 2e-3, "{n:?}");
        let f = extract(&sp).unwrap();
        assert_eq!(f.branch_hint, Branch::Extended);
        assert!(!f.collision);
        assert!(f.to_json().contains("cf_peak"));
    }

    #[test]
    fn low_peaks_are_not_cf_peaks() {
        let sp = from_fn(|x| {
            if (0.0..0.8).contains(&x) {
                1.0 + 0.001 * lorentz(x, 0.5, 0.02)
            } else {
                0.0
            }
        });
        assert!(cf_peak(&sp).unwrap().is_none());
    }

    #[test]
    fn requires_normalized_reduced_axis() {
        let mut sp = from_fn(|x| 1.0 + x);
        sp.meta.normalized = false;
        assert!(matches!(cf_peak(&sp), Err(Error::Unnormalized)));
        sp.meta.normalized = true;
        sp.axis = Axis::FrequencyShift;
        assert!(matches!(
            ninety_degree_peak(&sp),
            Err(Error::AxisMismatch(..))
        ));
    }

    #[test]
    fn mismatch_extremes() {
        let a = from_fn(|x| if (0.0..0.3).contains(&x) { 1.0 } else { 0.0 });
        let b = from_fn(|x| if (0.6..0.9).contains(&x) { 1.0 } else { 0.0 });
        assert_eq!(area_mismatch(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(area_mismatch(&a, &b).unwrap(), 2.0, max_relative = 1e-9);
        let r = surface_peak_residual(&a, &a).unwrap();
        assert!(r.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_locates_injected_bump() {
        let base = |x: f64| {
            if (0.0..0.8).contains(&x) {
                1.0 + x
            } else {
                0.0
            }
        };
        let calc = from_fn(base);
        let meas = from_fn(|x| base(x) + 0.5 * (-((x - 0.55) / 0.01).powi(2)).exp());
        let r = surface_peak_residual(&meas, &calc).unwrap();
        let k = (0..r.len())
            .max_by(|&a, &b| r.y[a].total_cmp(&r.y[b]))
            .unwrap();
        assert!((r.x[k] - 0.55).abs() <= 1.1 / SPECTRUM_BINS as f64);
        assert_relative_eq!(
            r.integral(),
            area_mismatch(&meas, &calc).unwrap() * meas.integral(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn axis_mismatch_is_rejected() {
        let a = from_fn(|x| 1.0 + x);
        let mut b = a.clone();
        b.axis = Axis::FrequencyShift;
        assert!(matches!(
            area_mismatch(&a, &b),
            Err(Error::AxisMismatch(..))
        ));
    }
}
