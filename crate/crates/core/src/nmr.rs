//! Local-oscillator NMR line shapes and the field / frequency / reduced-shift axes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::Texture;

/// Gyromagnetic ratio of 3He over 2 pi, Hz/T.
pub const GAMMA_HE3: f64 = 32.434_099e6;

pub const SPECTRUM_BINS: usize = 2048;
pub const SPECTRUM_RANGE: (f64, f64) = (-0.05, 1.05);

/// Lorentzian tails are cut at this many half-widths.
const TAIL_HALF_WIDTHS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Field,
    FrequencyShift,
    ReducedShift,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Field => "field",
            Axis::FrequencyShift => "frequency_shift",
            Axis::ReducedShift => "reduced_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "field" => Ok(Axis::Field),
            "frequency_shift" => Ok(Axis::FrequencyShift),
            "reduced_shift" => Ok(Axis::ReducedShift),
            _ => Err(Error::Format(format!("unknown axis `{s}`"))),
        }
    }
}

/// Setup parameters carried along with a spectrum. Unknown values are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumMeta {
    /// Excitation frequency, Hz. Also used as the Larmor frequency.
    pub nu_rf: Option<f64>,
    /// Larmor field, T.
    pub h_l: Option<f64>,
    /// Leggett frequency Omega_B / 2 pi, Hz.
    pub omega_b: Option<f64>,
    pub dh_over_h: Option<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub axis: Axis,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(axis: Axis, x: Vec<f64>, y: Vec<f64>, meta: SpectrumMeta) -> Result<Spectrum> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::Spectrum(format!(
                "need >= 2 paired samples, got {} x / {} y",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Spectrum("non-finite sample".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spectrum(
                "abscissae must be strictly increasing".into(),
            ));
        }
        Ok(Spectrum { axis, x, y, meta })
    }

    /// Uniform grid of `bins` centers over `range`.
    pub fn uniform_axis(bins: usize, range: (f64, f64)) -> Vec<f64> {
        let w = (range.1 - range.0) / bins as f64;
        (0..bins).map(|k| range.0 + (k as f64 + 0.5) * w).collect()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.x, &self.y)
    }

    /// Bin width if the axis is uniform to 1e-9 relative.
    pub fn uniform_step(&self) -> Option<f64> {
        let w = (self.x[self.len() - 1] - self.x[0]) / (self.len() - 1) as f64;
        self.x
            .windows(2)
            .all(|p| ((p[1] - p[0]) - w).abs() <= 1e-9 * w.abs().max(1e-300))
            .then_some(w)
    }

    /// Linear interpolation onto `x`, zero outside the sampled range.
    pub fn resample(&self, x: &[f64]) -> Result<Spectrum> {
        let y = x.iter().map(|&v| self.value_at(v)).collect();
        Spectrum::new(self.axis, x.to_vec(), y, self.meta)
    }

    pub fn value_at(&self, v: f64) -> f64 {
        let n = self.len();
        if v < self.x[0] || v > self.x[n - 1] {
            return 0.0;
        }
        let k = self.x.partition_point(|&a| a <= v).clamp(1, n - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let f = (v - x0) / (x1 - x0);
        self.y[k - 1] * (1.0 - f) + self.y[k] * f
    }

    fn require(&self, axis: Axis) -> Result<()> {
        if self.axis != axis {
            return Err(Error::AxisMismatch(
                self.axis.name().into(),
                axis.name().into(),
            ));
        }
        Ok(())
    }

    fn need(v: Option<f64>, what: &str) -> Result<f64> {
        v.filter(|x| x.is_finite() && *x > 0.0)
            .ok_or_else(|| Error::Spectrum(format!("metadata `{what}` missing or not positive")))
    }

    /// Reduced or field axis to frequency shift in Hz, using the metadata Omega_B or H_L and nu_rf.
    pub fn to_frequency_shift(&self) -> Result<Spectrum> {
        match self.axis {
            Axis::FrequencyShift => return Ok(self.clone()),
            Axis::Field => return self.field_to_shift(),
            Axis::ReducedShift => {}
        }
        let scale = shift_to_frequency(
            1.0,
            Self::need(self.meta.omega_b, "Omega_B")?,
            Self::need(self.meta.nu_rf, "nu_rf")?,
        );
        let x = self.x.iter().map(|v| v * scale).collect();
        let y = self.y.iter().map(|v| v / scale).collect();
        Spectrum::new(Axis::FrequencyShift, x, y, self.meta)
    }

    /// Field or frequency-shift axis to the reduced axis.
    pub fn to_reduced(&self) -> Result<Spectrum> {
        match self.axis {
            Axis::ReducedShift => Ok(self.clone()),
            Axis::Field => self.field_to_shift()?.to_reduced(),
            Axis::FrequencyShift => {
                let scale = shift_to_frequency(
                    1.0,
                    Self::need(self.meta.omega_b, "Omega_B")?,
                    Self::need(self.meta.nu_rf, "nu_rf")?,
                );
                let x = self.x.iter().map(|v| v / scale).collect();
                let y = self.y.iter().map(|v| v * scale).collect();
                Spectrum::new(Axis::ReducedShift, x, y, self.meta)
            }
        }
    }

    /// Frequency-shift axis to magnetic field, using H_L and nu_rf. Only the branch with H > H_L / 2 is used.
    pub fn to_field(&self) -> Result<Spectrum> {
        self.require(Axis::FrequencyShift)?;
        let hl = Self::need(self.meta.h_l, "H_L")?;
        let nu = Self::need(self.meta.nu_rf, "nu_rf")?;
        let mut pts = Vec::with_capacity(self.len());
        for (&dnu, &a) in self.x.iter().zip(&self.y) {
            let disc = 1.0 - 4.0 * dnu / nu;
            if disc <= 0.0 {
                return Err(Error::Spectrum(format!(
                    "shift {dnu} Hz beyond the field branch"
                )));
            }
            let h = 0.5 * hl * (1.0 + disc.sqrt());
            let jac = ((hl - 2.0 * h) * nu / (hl * hl)).abs();
            pts.push((h, a * jac));
        }
        pts.reverse();
        let (x, y) = pts.into_iter().unzip();
        Spectrum::new(Axis::Field, x, y, self.meta)
    }

    fn field_to_shift(&self) -> Result<Spectrum> {
        let hl = Self::need(self.meta.h_l, "H_L")?;
        let nu = Self::need(self.meta.nu_rf, "nu_rf")?;
        let mut pts: Vec<(f64, f64)> = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&h, &a)| {
                let jac = ((hl - 2.0 * h) * nu / (hl * hl)).abs();
                (field_to_frequency(h, hl, nu), a / jac)
            })
            .collect();
        pts.reverse();
        let (x, y) = pts.into_iter().unzip();
        Spectrum::new(Axis::FrequencyShift, x, y, self.meta)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# axis={}", self.axis.name());
        for (k, v) in [
            ("nu_rf", self.meta.nu_rf),
            ("H_L", self.meta.h_l),
            ("Omega_B", self.meta.omega_b),
            ("dHoverH", self.meta.dh_over_h),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "# {k}={v}");
            }
        }
        let _ = writeln!(s, "# normalized={}", self.meta.normalized);
        s.push_str("x,absorption\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Spectrum> {
        let (axis, meta, x, y) = parse_csv(text)?;
        Spectrum::new(axis, x, y, meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Spectrum> {
        Spectrum::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Header and columns of a spectrum file, without any ordering checks.
pub fn parse_csv(text: &str) -> Result<(Axis, SpectrumMeta, Vec<f64>, Vec<f64>)> {
    let mut axis = None;
    let mut meta = SpectrumMeta::default();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("bad number `{v}`: {e}")))
    };
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `# key=value`", ln + 1)))?;
            match k.trim() {
                "axis" => axis = Some(Axis::parse(v.trim())?),
                "nu_rf" => meta.nu_rf = Some(num(v)?),
                "H_L" => meta.h_l = Some(num(v)?),
                "Omega_B" => meta.omega_b = Some(num(v)?),
                "dHoverH" => meta.dh_over_h = Some(num(v)?),
                "normalized" => {
                    meta.normalized = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Format(format!("bad flag `{v}`")))?
                }
                _ => {}
            }
            continue;
        }
        if line.starts_with(|c: char| c.is_ascii_alphabetic()) && x.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected two columns", ln + 1)))?;
        x.push(num(a)?);
        y.push(num(b)?);
    }
    let axis = axis.ok_or_else(|| Error::Format("missing `# axis=` header".into()))?;
    Ok((axis, meta, x, y))
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1]))
        .sum()
}

pub fn reduced_shift(beta: f64) -> f64 {
    beta.sin().powi(2)
}

/// Frequency shift in Hz of a reduced shift, with Omega_B / 2 pi in Hz.
pub fn shift_to_frequency(reduced: f64, omega_b: f64, nu_l: f64) -> f64 {
    reduced * omega_b * omega_b / (2.0 * nu_l)
}

/// Frequency shift in Hz of a resonance observed at field `h` in a cw field sweep.
pub fn field_to_frequency(h: f64, h_l: f64, nu_rf: f64) -> f64 {
    (h_l - h) * h / (h_l * h_l) * nu_rf
}

/// Unbroadened local-oscillator spectrum on the reduced axis, weight 2 pi r dr per annulus.
///
/// Each cell is cut into sub-annuli fine enough that sin^2(beta) moves less than half a bin,
/// and each sub-annulus is shared linearly between the two nearest bin centers.
pub fn line_shape(tex: &Texture, bins: usize, range: (f64, f64)) -> Result<Spectrum> {
    if bins < 2 || !(range.1 > range.0) {
        return Err(Error::Domain(format!(
            "bad spectral grid: {bins} bins over {range:?}"
        )));
    }
    let w = (range.1 - range.0) / bins as f64;
    let mut y = vec![0.0; bins];
    let mut deposit = |s: f64, weight: f64| {
        let u = ((s - range.0) / w - 0.5).clamp(0.0, (bins - 1) as f64);
        let k = (u.floor() as usize).min(bins - 2);
        let f = u - k as f64;
        y[k] += weight * (1.0 - f);
        y[k + 1] += weight * f;
    };
    let h = tex.grid.step();
    for i in 0..tex.grid.cells {
        let (b0, b1) = (tex.beta[i], tex.beta[i + 1]);
        let m = ((b1 - b0).abs() / (0.5 * w)).ceil().max(1.0) as usize;
        let dr = h / m as f64;
        for j in 0..m {
            let f = (j as f64 + 0.5) / m as f64;
            let r = (i as f64 + f) * h;
            deposit(reduced_shift(b0 + f * (b1 - b0)), 2.0 * PI * r * dr);
        }
    }
    for v in &mut y {
        *v /= w;
    }
    Spectrum::new(
        Axis::ReducedShift,
        Spectrum::uniform_axis(bins, range),
        y,
        SpectrumMeta::default(),
    )
}

/// Lorentzian half-width on the reduced axis for a field inhomogeneity `dh_over_h`.
pub fn reduced_half_width(dh_over_h: f64, nu_rf: f64, omega_b: f64, nu_l: f64) -> f64 {
    nu_rf * dh_over_h * 2.0 * nu_l / (omega_b * omega_b)
}

/// Convolve a uniform reduced-axis spectrum with the inhomogeneity Lorentzian.
///
/// The kernel is integrated over each bin, cut at 50 half-widths and rescaled to unit mass.
/// The output grid grows by the kernel reach on both sides so no weight falls off the ends.
pub fn broaden(
    spec: &Spectrum,
    dh_over_h: f64,
    nu_rf: f64,
    omega_b: f64,
    nu_l: f64,
) -> Result<Spectrum> {
    spec.require(Axis::ReducedShift)?;
    if !(dh_over_h >= 0.0) || !dh_over_h.is_finite() {
        return Err(Error::Domain(format!("dH/H must be >= 0, got {dh_over_h}")));
    }
    if !(nu_rf > 0.0 && omega_b > 0.0 && nu_l > 0.0) {
        return Err(Error::Domain(
            "broadening needs positive nu_rf, Omega_B and nu_L".into(),
        ));
    }
    let w = spec
        .uniform_step()
        .ok_or_else(|| Error::Spectrum("broadening needs a uniform axis".into()))?;
    let meta = SpectrumMeta {
        nu_rf: Some(nu_rf),
        omega_b: Some(omega_b),
        dh_over_h: Some(dh_over_h),
        ..spec.meta
    };
    let gamma = reduced_half_width(dh_over_h, nu_rf, omega_b, nu_l);
    let reach = (TAIL_HALF_WIDTHS * gamma / w).ceil() as usize;
    if gamma == 0.0 || reach == 0 {
        return Spectrum::new(spec.axis, spec.x.clone(), spec.y.clone(), meta);
    }
    let kernel: Vec<f64> = (0..=2 * reach)
        .map(|j| {
            let c = j as f64 - reach as f64;
            (((c + 0.5) * w / gamma).atan() - ((c - 0.5) * w / gamma).atan()) / PI
        })
        .collect();
    let mass: f64 = kernel.iter().sum();
    let n = spec.len();
    let mut y = vec![0.0; n + 2 * reach];
    for (k, &v) in spec.y.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (j, &kv) in kernel.iter().enumerate() {
            y[k + j] += v * kv / mass;
        }
    }
    let x0 = spec.x[0] - reach as f64 * w;
    let x = (0..y.len()).map(|m| x0 + m as f64 * w).collect();
    Spectrum::new(spec.axis, x, y, meta)
}

/// Divide by the trapezoid integral. Already-normalized input is returned unchanged.
pub fn normalize(spec: &Spectrum) -> Result<Spectrum> {
    let area = spec.integral();
    if !(area > 0.0) {
        return Err(Error::NonPositiveArea(area));
    }
    let mut out = spec.clone();
    if spec.meta.normalized && (area - 1.0).abs() < 1e-12 {
        return Ok(out);
    }
    for v in &mut out.y {
        *v /= area;
    }
    out.meta.normalized = true;
    Ok(out)
}

/// Texture to normalized, broadened spectrum on the default reduced grid.
pub fn synthesize(tex: &Texture, dh_over_h: f64, nu_rf: f64, omega_b: f64) -> Result<Spectrum> {
    let raw = line_shape(tex, SPECTRUM_BINS, SPECTRUM_RANGE)?;
    let mut out = normalize(&broaden(&raw, dh_over_h, nu_rf, omega_b, nu_rf)?)?;
    out.meta.h_l = Some(nu_rf / GAMMA_HE3);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{Branch, RadialGrid};
    use approx::assert_relative_eq;

    fn flat(beta: f64) -> Texture {
        let grid = RadialGrid::new(3e-3, 3e-5).unwrap();
        Texture::from_angles(
            grid,
            vec![0.0; grid.len()],
            vec![beta; grid.len()],
            Branch::Simple,
        )
        .unwrap()
    }

    fn ramp(end: f64) -> Texture {
        let grid = RadialGrid::new(3e-3, 3e-5).unwrap();
        let beta = (0..grid.len())
            .map(|i| end * i as f64 / grid.cells as f64)
            .collect();
        Texture::from_angles(grid, vec![0.0; grid.len()], beta, Branch::Simple).unwrap()
    }

    #[test]
    fn shifts() {
        assert_eq!(reduced_shift(0.0), 0.0);
        assert_relative_eq!(
            reduced_shift(crate::texture::wall_angle()),
            0.8,
            epsilon = 1e-14
        );
        assert_relative_eq!(reduced_shift(PI / 2.0), 1.0);
        assert_relative_eq!(
            shift_to_frequency(0.6, 2.5e5, 9.65e5),
            2.0 * shift_to_frequency(0.3, 2.5e5, 9.65e5)
        );
        assert_eq!(field_to_frequency(0.03, 0.03, 1e6), 0.0);
        let hl = 0.0606;
        let d = field_to_frequency(hl * (1.0 - 1e-3), hl, 1.967e6);
        assert_relative_eq!(d, 1e-3 * (1.0 - 1e-3) * 1.967e6, max_relative = 1e-12);
        assert!((d - 1965.0).abs() < 1.0);
    }

    #[test]
    fn flat_texture_is_a_delta() {
        let beta = 0.9;
        let s0 = reduced_shift(beta);
        let sp = line_shape(&flat(beta), SPECTRUM_BINS, SPECTRUM_RANGE).unwrap();
        assert_relative_eq!(sp.integral(), PI * 9e-6, max_relative = 1e-12);
        let nz: Vec<usize> = (0..sp.len()).filter(|&k| sp.y[k] != 0.0).collect();
        assert!(nz.len() <= 2 && nz.windows(2).all(|p| p[1] == p[0] + 1));
        let centroid: f64 = nz.iter().map(|&k| sp.x[k] * sp.y[k]).sum::<f64>()
            / nz.iter().map(|&k| sp.y[k]).sum::<f64>();
        assert_relative_eq!(centroid, s0, epsilon = 1e-12);
    }

    #[test]
    fn weight_stays_inside_unit_interval() {
        let sp = line_shape(&ramp(2.0), SPECTRUM_BINS, SPECTRUM_RANGE).unwrap();
        let w = sp.uniform_step().unwrap();
        for (x, y) in sp.x.iter().zip(&sp.y) {
            if *x < -w || *x > 1.0 + w {
                assert_eq!(*y, 0.0);
            }
        }
    }

    #[test]
    fn broadening_conserves_and_flattens() {
        let raw = line_shape(&ramp(1.1), SPECTRUM_BINS, SPECTRUM_RANGE).unwrap();
        let a0 = raw.integral();
        let mut last = f64::INFINITY;
        for dh in [0.0, 2e-4, 8.8e-4, 2e-3] {
            let b = broaden(&raw, dh, 9.65e5, 2.8e5, 9.65e5).unwrap();
            assert_relative_eq!(b.integral(), a0, max_relative = 1e-9);
            let peak = b.y.iter().cloned().fold(0.0, f64::max);
            assert!(peak < last);
            last = peak;
            assert!(b.uniform_step().is_some());
        }
        assert!(matches!(
            broaden(&raw, -1e-4, 9.65e5, 2.8e5, 9.65e5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_broadening_is_identity() {
        let raw = line_shape(&ramp(1.0), SPECTRUM_BINS, SPECTRUM_RANGE).unwrap();
        let b = broaden(&raw, 0.0, 9.65e5, 2.8e5, 9.65e5).unwrap();
        assert_eq!(b.y, raw.y);
        assert_eq!(b.x, raw.x);
    }

    #[test]
    fn normalize_properties() {
        let raw = line_shape(&ramp(1.0), 512, SPECTRUM_RANGE).unwrap();
        let n1 = normalize(&raw).unwrap();
        assert_relative_eq!(n1.integral(), 1.0, epsilon = 1e-12);
        assert_eq!(normalize(&n1).unwrap(), n1);
        let mut scaled = raw.clone();
        scaled.y.iter_mut().for_each(|v| *v *= 7.0);
        let n7 = normalize(&scaled).unwrap();
        for (a, b) in n1.y.iter().zip(&n7.y) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let zero = Spectrum::new(
            Axis::ReducedShift,
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            SpectrumMeta::default(),
        )
        .unwrap();
        assert!(matches!(normalize(&zero), Err(Error::NonPositiveArea(_))));
    }

    #[test]
    fn axis_round_trip() {
        let raw = broaden(
            &line_shape(&ramp(1.0), 512, SPECTRUM_RANGE).unwrap(),
            5e-4,
            9.65e5,
            2.8e5,
            9.65e5,
        )
        .unwrap();
        let mut sp = normalize(&raw).unwrap();
        sp.meta.h_l = Some(9.65e5 / GAMMA_HE3);
        let field = sp.to_frequency_shift().unwrap().to_field().unwrap();
        assert_relative_eq!(field.integral(), 1.0, max_relative = 1e-4);
        let back = field.to_reduced().unwrap();
        for (a, b) in back.x.iter().zip(&sp.x) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
        for (a, b) in back.y.iter().zip(&sp.y) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut sp = normalize(&line_shape(&ramp(1.3), 256, SPECTRUM_RANGE).unwrap()).unwrap();
        sp.meta.nu_rf = Some(965e3);
        sp.meta.omega_b = Some(2.7e5 + 1.0 / 3.0);
        sp.meta.dh_over_h = Some(8.8e-4);
        let back = Spectrum::from_csv(&sp.to_csv()).unwrap();
        assert_eq!(back, sp);
        assert!(back
            .x
            .iter()
            .zip(&sp.x)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back
            .y
            .iter()
            .zip(&sp.y)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(Spectrum::new(
            Axis::Field,
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            SpectrumMeta::default()
        )
        .is_err());
        assert!(Spectrum::new(Axis::Field, vec![1.0], vec![0.0], SpectrumMeta::default()).is_err());
        assert!(Spectrum::from_csv("x,absorption\n0,1\n1,2\n").is_err());
    }
}
