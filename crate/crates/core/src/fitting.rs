//! Spectral fits over (T, lambda_HV, dH/H).
//!
//! The objective is `area_mismatch` on the frequency-shift axis. On the
//! reduced axis the temperature would only enter through the broadening,
//! because Omega_B(T) is divided out.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{area_mismatch, cf_peak, edge_shift};
use crate::nmr::{normalize, parse_csv, shift_to_frequency, Axis, Spectrum};
use crate::scan::{scan_omega_c1, ScanOptions};
use crate::setup::Setup;
use crate::texture::{Branch, Texture};

/// (lambda_HV, dH/H) count as unresolved when every lambda_HV between the
/// bounds, with dH/H re-optimized, already passes the dA gate.
pub const DEGENERACY_TOL: f64 = DELTA_A_MAX;
/// Number of lambda_HV points on the degeneracy profile.
pub const PROFILE_POINTS: usize = 7;
/// Upper limit on anchor / polish alternations.
const ANCHOR_ROUNDS: usize = 6;
/// T offset used to linearize the anchor curve.
const LINK_DT: f64 = 0.005;
/// Coarse samples before each Brent search.
const COARSE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "T")]
    T,
    #[serde(rename = "lambda_HV")]
    LambdaHv,
    #[serde(rename = "dHoverH")]
    DhOverH,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::T => "T",
            Param::LambdaHv => "lambda_HV",
            Param::DhOverH => "dHoverH",
        }
    }
}

impl std::str::FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Param::T),
            "lambda_HV" => Ok(Param::LambdaHv),
            "dHoverH" => Ok(Param::DhOverH),
            other => Err(Error::Domain(format!("unknown fit parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "lambda_HV")]
    pub lambda_hv: f64,
    #[serde(rename = "dHoverH")]
    pub dh_over_h: f64,
}

impl Params {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::T => self.t,
            Param::LambdaHv => self.lambda_hv,
            Param::DhOverH => self.dh_over_h,
        }
    }

    pub fn set(&mut self, p: Param, v: f64) {
        match p {
            Param::T => self.t = v,
            Param::LambdaHv => self.lambda_hv = v,
            Param::DhOverH => self.dh_over_h = v,
        }
    }
}

/// Everything the forward model holds fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedContext {
    pub setup: Setup,
    pub omega: f64,
    pub omega_v: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    SingleSpectrum,
    /// A second spectrum at the same T, lambda_HV and dH/H but another flow state or branch.
    DualTexturePair {
        partner: Spectrum,
        omega: f64,
        omega_v: f64,
        branch: Branch,
    },
    /// lambda_HV pinned by a measured Omega_c1 at `omega_v`.
    OmegaC1Anchor {
        omega_c1: f64,
        omega_v: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub free: Vec<Param>,
    pub initial: Params,
    pub lower: Params,
    pub upper: Params,
    pub strategy: Strategy,
    /// Stop when the simplex spread of dA falls below this.
    pub tolerance: f64,
    pub max_iter: u64,
}

impl FitConfig {
    pub fn new(free: Vec<Param>, initial: Params, lower: Params, upper: Params) -> Self {
        FitConfig {
            free,
            initial,
            lower,
            upper,
            strategy: Strategy::SingleSpectrum,
            tolerance: 1e-4,
            max_iter: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::Domain("no free fit parameters".into()));
        }
        for p in [Param::T, Param::LambdaHv, Param::DhOverH] {
            let (lo, x, hi) = (self.lower.get(p), self.initial.get(p), self.upper.get(p));
            if !(lo <= x && x <= hi) {
                return Err(Error::Domain(format!(
                    "{}: initial {x} outside bounds [{lo}, {hi}]",
                    p.name()
                )));
            }
        }
        if !(self.lower.t > 0.0 && self.upper.t < 1.0) {
            return Err(Error::Domain("T bounds must lie inside (0, 1)".into()));
        }
        if self.lower.dh_over_h < 0.0 || self.lower.lambda_hv < 0.0 {
            return Err(Error::Domain(
                "lambda_HV and dH/H bounds must be non-negative".into(),
            ));
        }
        if matches!(self.strategy, Strategy::OmegaC1Anchor { .. })
            && !self.free.contains(&Param::LambdaHv)
        {
            return Err(Error::Domain(
                "the Omega_c1 anchor needs lambda_HV free".into(),
            ));
        }
        Ok(())
    }

    fn is_free(&self, p: Param) -> bool {
        self.free.contains(&p)
    }
}

/// Fit criteria, all recomputable from the final (measured, calculated) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub edge_overlap: bool,
    pub cf_peak_match: bool,
    pub delta_a_ok: bool,
}

impl Criteria {
    pub fn all(&self) -> bool {
        self.edge_overlap && self.cf_peak_match && self.delta_a_ok
    }
}

pub const EDGE_TOL: f64 = 0.01;
pub const CF_POSITION_TOL: f64 = 0.01;
pub const DELTA_A_MAX: f64 = 0.1;

/// dA and the three criteria. The calculated spectrum supplies Omega_B for the reduced axis.
pub fn evaluate(measured: &Spectrum, calculated: &Spectrum) -> Result<(f64, Criteria)> {
    let delta_a = area_mismatch(
        &normalize(&measured.to_frequency_shift()?)?,
        &normalize(&calculated.to_frequency_shift()?)?,
    )?;
    let calc = normalize(&calculated.to_reduced()?)?;
    let mut m = measured.to_frequency_shift()?;
    m.meta.omega_b = calc.meta.omega_b;
    m.meta.nu_rf = calc.meta.nu_rf;
    let meas = normalize(&m.to_reduced()?)?;
    let edge_overlap = match (edge_shift(&meas), edge_shift(&calc)) {
        (Ok(a), Ok(b)) => (a - b).abs() < EDGE_TOL,
        _ => false,
    };
    let cf_peak_match = match (cf_peak(&meas)?, cf_peak(&calc)?) {
        (None, None) => true,
        (Some(a), Some(b)) => {
            (a.height - b.height).abs() <= delta_a * a.height
                && (a.position - b.position).abs() < CF_POSITION_TOL
        }
        _ => false,
    };
    Ok((
        delta_a,
        Criteria {
            edge_overlap,
            cf_peak_match,
            delta_a_ok: delta_a < DELTA_A_MAX,
        },
    ))
}

/// Reduced-axis, normalized spectrum for one parameter set.
pub fn forward_model(params: &Params, ctx: &FixedContext) -> Result<Spectrum> {
    let mat = ctx.setup.material(params.t, Some(params.lambda_hv))?;
    let flow = ctx.setup.flow(ctx.omega, ctx.omega_v)?;
    let tex = ctx.setup.solve(ctx.branch, &mat, &flow)?;
    ctx.setup.spectrum(&tex, &mat, params.dh_over_h)
}

/// Forward model with textures cached by (T, lambda_HV); dH/H only changes the broadening.
struct Model<'a> {
    ctx: FixedContext,
    measured: &'a Spectrum,
    cache: Mutex<HashMap<(u64, u64), (Texture, f64)>>,
}

impl<'a> Model<'a> {
    fn new(ctx: FixedContext, measured: &'a Spectrum) -> Result<Self> {
        Ok(Model {
            ctx,
            measured,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn spectrum(&self, p: &Params) -> Result<Spectrum> {
        let key = (p.t.to_bits(), p.lambda_hv.to_bits());
        let hit = self.cache.lock().expect("cache lock").get(&key).cloned();
        let (tex, omega_b) = match hit {
            Some(v) => v,
            None => {
                let s = &self.ctx.setup;
                let mat = s.material(p.t, Some(p.lambda_hv))?;
                let flow = s.flow(self.ctx.omega, self.ctx.omega_v)?;
                let tex = s.solve(self.ctx.branch, &mat, &flow)?;
                let v = (tex, mat.leggett_freq);
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(key, v.clone());
                v
            }
        };
        let s = &self.ctx.setup;
        crate::nmr::synthesize(&tex, p.dh_over_h, s.nu_rf, omega_b)
    }

    fn mismatch(&self, p: &Params) -> Result<f64> {
        let calc = self.spectrum(p)?.to_frequency_shift()?;
        area_mismatch(self.measured, &calc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub params: Params,
    pub delta_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "lambda_HV")]
    pub lambda_hv: f64,
    /// [lambda-, lambda+]; zero width until `lambda_uncertainty` fills it.
    pub lambda_interval: (f64, f64),
    #[serde(rename = "dHoverH")]
    pub dh_over_h: f64,
    #[serde(rename = "deltaA")]
    pub delta_a: f64,
    pub partner_delta_a: Option<f64>,
    pub criteria: Criteria,
    pub trace: Vec<TraceEntry>,
    pub calculated: Spectrum,
}

impl FitResult {
    pub fn params(&self) -> Params {
        Params {
            t: self.t,
            lambda_hv: self.lambda_hv,
            dh_over_h: self.dh_over_h,
        }
    }
}

/// Joint objective over one or two spectra, in unit-box coordinates of the free parameters.
struct Objective<'a> {
    models: Vec<Model<'a>>,
    cfg: &'a FitConfig,
    base: Params,
    dims: Vec<Param>,
    link: Option<Link>,
    failure: Mutex<Option<Error>>,
}

/// lambda_HV tied to T along a line, the local shape of the Omega_c1 anchor.
#[derive(Debug, Clone, Copy)]
struct Link {
    t0: f64,
    lambda0: f64,
    slope: f64,
}

impl<'a> Objective<'a> {
    fn params(&self, u: &[f64]) -> Params {
        let mut p = self.base;
        for (&d, &v) in self.dims.iter().zip(u) {
            let (lo, hi) = (self.cfg.lower.get(d), self.cfg.upper.get(d));
            p.set(d, lo + v.clamp(0.0, 1.0) * (hi - lo));
        }
        if let Some(l) = self.link {
            let lam = l.lambda0 + l.slope * (p.t - l.t0);
            p.lambda_hv = lam.clamp(self.cfg.lower.lambda_hv, self.cfg.upper.lambda_hv);
        }
        p
    }

    fn unit(&self, p: &Params) -> Vec<f64> {
        self.dims
            .iter()
            .map(|&d| {
                let (lo, hi) = (self.cfg.lower.get(d), self.cfg.upper.get(d));
                if hi > lo {
                    (p.get(d) - lo) / (hi - lo)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn value(&self, p: &Params) -> Result<f64> {
        self.models.iter().map(|m| m.mismatch(p)).sum()
    }

    fn eval(&self, u: &[f64]) -> std::result::Result<f64, argmin::core::Error> {
        let outside: f64 = u.iter().map(|v| (v - v.clamp(0.0, 1.0)).abs()).sum();
        match self.value(&self.params(u)) {
            Ok(v) => Ok(v + 10.0 * outside),
            Err(e) => {
                let msg = e.to_string();
                *self.failure.lock().expect("failure lock") = Some(e);
                Err(argmin::core::Error::msg(msg))
            }
        }
    }

    fn fail(&self, e: argmin::core::Error) -> Error {
        self.failure
            .lock()
            .expect("failure lock")
            .take()
            .unwrap_or_else(|| Error::Domain(format!("optimizer: {e}")))
    }
}

struct Line<'o, 'a>(&'o Objective<'a>);

impl CostFunction for Line<'_, '_> {
    type Param = f64;
    type Output = f64;
    fn cost(&self, u: &f64) -> std::result::Result<f64, argmin::core::Error> {
        self.0.eval(&[*u])
    }
}

struct Simplex<'o, 'a>(&'o Objective<'a>);

impl CostFunction for Simplex<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, u: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.0.eval(u)
    }
}

/// Coarse scan of the unit interval, then Brent inside the best bracket.
fn line_search(obj: &Objective, window: (f64, f64)) -> Result<(f64, f64)> {
    let (a, b) = window;
    let xs: Vec<f64> = (0..COARSE)
        .map(|k| a + (b - a) * k as f64 / (COARSE - 1) as f64)
        .collect();
    let mut best = (0usize, f64::INFINITY);
    for (k, &x) in xs.iter().enumerate() {
        let v = obj.eval(&[x]).map_err(|e| obj.fail(e))?;
        if v < best.1 {
            best = (k, v);
        }
    }
    let lo = xs[best.0.saturating_sub(1)];
    let hi = xs[(best.0 + 1).min(COARSE - 1)];
    let res = Executor::new(Line(obj), BrentOpt::new(lo, hi).set_tolerance(1e-6, 1e-6))
        .configure(|s| s.max_iters(100))
        .run()
        .map_err(|e| obj.fail(e))?;
    let st = res.state();
    let x = st.best_param.unwrap_or(xs[best.0]);
    if st.best_cost <= best.1 {
        Ok((x, st.best_cost))
    } else {
        Ok((xs[best.0], best.1))
    }
}

fn simplex_search(obj: &Objective, start: &[f64], size: f64) -> Result<(Vec<f64>, f64)> {
    let n = start.len();
    let mut verts = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if v[i] + size <= 1.0 { size } else { -size };
        verts.push(v);
    }
    let nm = NelderMead::new(verts)
        .with_sd_tolerance(obj.cfg.tolerance * 1e-2)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let res = Executor::new(Simplex(obj), nm)
        .configure(|s| s.max_iters(obj.cfg.max_iter))
        .run()
        .map_err(|e| obj.fail(e))?;
    let st = res.state();
    let u = st.best_param.clone().unwrap_or_else(|| start.to_vec());
    Ok((u, st.best_cost))
}

struct Stager<'a> {
    cfg: &'a FitConfig,
    models: Vec<(FixedContext, &'a Spectrum)>,
    current: Params,
    link: Option<Link>,
    trace: Vec<TraceEntry>,
}

impl<'a> Stager<'a> {
    fn objective(&self, dims: Vec<Param>) -> Result<Objective<'a>> {
        let models = self
            .models
            .iter()
            .map(|(c, m)| Model::new(c.clone(), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            models,
            cfg: self.cfg,
            base: self.current,
            dims,
            link: self.link,
            failure: Mutex::new(None),
        })
    }

    fn record(&mut self, stage: &str, delta_a: f64) {
        self.trace.push(TraceEntry {
            stage: stage.into(),
            params: self.current,
            delta_a,
        });
    }

    /// 1-D search of `p` over `window` (unit coordinates).
    fn line(&mut self, stage: &str, p: Param, window: (f64, f64)) -> Result<f64> {
        let obj = self.objective(vec![p])?;
        let (u, v) = line_search(&obj, window)?;
        self.current = obj.params(&[u]);
        self.record(stage, v);
        Ok(v)
    }

    fn joint(&mut self, stage: &str, dims: Vec<Param>, size: f64) -> Result<f64> {
        if dims.len() == 1 {
            let obj = self.objective(dims.clone())?;
            let u = obj.unit(&self.current)[0];
            return self.line(stage, dims[0], ((u - size).max(0.0), (u + size).min(1.0)));
        }
        let obj = self.objective(dims)?;
        let start = obj.unit(&self.current);
        let before = obj.value(&self.current)?;
        let (u, v) = simplex_search(&obj, &start, size)?;
        let v = if v <= before {
            self.current = obj.params(&u);
            v
        } else {
            before
        };
        self.record(stage, v);
        Ok(v)
    }

    fn value(&self) -> Result<f64> {
        self.objective(vec![])?.value(&self.current)
    }
}

fn unit_of(cfg: &FitConfig, p: Param, v: f64) -> f64 {
    let (lo, hi) = (cfg.lower.get(p), cfg.upper.get(p));
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Omega_c1 from the continuation scan used by the anchor strategy, resolved to 1e-3 rad/s.
///
/// `None` when no cf-peak appears below `4 max(omega_target, 0.5)`.
pub fn anchor_omega_c1(
    setup: &Setup,
    t: f64,
    omega_v: f64,
    lambda_hv: f64,
    omega_target: f64,
) -> Result<Option<f64>> {
    let opts = ScanOptions {
        step: 0.02,
        tolerance: 1e-3,
        ..ScanOptions::omega()
    };
    let top = 4.0 * omega_target.max(0.5);
    let n = ((top - omega_v) / opts.step).ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| omega_v + opts.step * k as f64).collect();
    match scan_omega_c1(setup, t, omega_v, Some(lambda_hv), &grid, &opts) {
        Ok(r) => Ok(Some(r.omega_c1)),
        Err(Error::NotFound { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// lambda_HV for which the anchor scan returns `omega_c1`, by bisection.
///
/// Omega_c1 falls as lambda_HV grows; a scan that finds no transition counts as too high.
pub fn anchor_lambda(
    setup: &Setup,
    t: f64,
    omega_v: f64,
    omega_c1: f64,
    bounds: (f64, f64),
    resolution: f64,
) -> Result<f64> {
    let c1 = |lam: f64| -> Result<f64> {
        Ok(anchor_omega_c1(setup, t, omega_v, lam, omega_c1)?.unwrap_or(f64::INFINITY))
    };
    let (mut lo, mut hi) = bounds;
    if c1(hi)? > omega_c1 || c1(lo)? < omega_c1 {
        return Err(Error::Domain(format!(
            "Omega_c1 = {omega_c1} not reachable for lambda_HV in [{lo}, {hi}]"
        )));
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if c1(mid)? > omega_c1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Staged fit of a measured spectrum.
///
/// T first, then lambda_HV and dH/H as the strategy prescribes, then T again,
/// then a joint polish of all free parameters.
pub fn fit_spectrum(measured: &Spectrum, ctx: &FixedContext, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if !measured.meta.normalized {
        return Err(Error::Unnormalized);
    }
    let meas = normalize(&measured.to_frequency_shift()?)?;
    let partner = match &cfg.strategy {
        Strategy::DualTexturePair {
            partner,
            omega,
            omega_v,
            branch,
        } => Some((
            FixedContext {
                omega: *omega,
                omega_v: *omega_v,
                branch: *branch,
                ..ctx.clone()
            },
            normalize(&partner.to_frequency_shift()?)?,
        )),
        _ => None,
    };
    let mut models = vec![(ctx.clone(), &meas)];
    if let Some((c, m)) = &partner {
        models.push((c.clone(), m));
    }
    let mut st = Stager {
        cfg,
        models,
        current: cfg.initial,
        link: None,
        trace: Vec::new(),
    };
    let start = st.value()?;
    st.record("initial", start);

    let t_free = cfg.is_free(Param::T);
    let lam_free = cfg.is_free(Param::LambdaHv);
    let dh_free = cfg.is_free(Param::DhOverH);

    if t_free {
        st.line("T", Param::T, (0.0, 1.0))?;
    }
    let anchor = |st: &mut Stager| -> Result<()> {
        if let Strategy::OmegaC1Anchor { omega_c1, omega_v } = cfg.strategy {
            let span = cfg.upper.lambda_hv - cfg.lower.lambda_hv;
            st.current.lambda_hv = anchor_lambda(
                &ctx.setup,
                st.current.t,
                omega_v,
                omega_c1,
                (cfg.lower.lambda_hv, cfg.upper.lambda_hv),
                1e-4 * span.max(1.0),
            )?;
            let v = st.value()?;
            st.record("lambda_HV anchor", v);
        }
        Ok(())
    };
    let anchored = matches!(cfg.strategy, Strategy::OmegaC1Anchor { .. });
    let mut shape: Vec<Param> = Vec::new();
    if lam_free && !anchored {
        shape.push(Param::LambdaHv);
    }
    if dh_free {
        shape.push(Param::DhOverH);
    }
    anchor(&mut st)?;
    match shape.len() {
        0 => {}
        1 => {
            st.line(shape[0].name(), shape[0], (0.0, 1.0))?;
        }
        _ => {
            st.line("lambda_HV", Param::LambdaHv, (0.0, 1.0))?;
            st.line("dHoverH", Param::DhOverH, (0.0, 1.0))?;
            st.joint("lambda_HV+dHoverH", shape.clone(), 0.05)?;
        }
    }
    if t_free {
        let u = unit_of(cfg, Param::T, st.current.t);
        st.line(
            "T refine",
            Param::T,
            ((u - 0.1).max(0.0), (u + 0.1).min(1.0)),
        )?;
        anchor(&mut st)?;
    }
    let mut polish: Vec<Param> = cfg.free.clone();
    if anchored {
        polish.retain(|&p| p != Param::LambdaHv);
    }
    if anchored && t_free {
        // T and the anchored lambda_HV are strongly coupled, so polish along the
        // linearized anchor curve and re-anchor until T settles.
        let Strategy::OmegaC1Anchor { omega_c1, omega_v } = cfg.strategy else {
            unreachable!()
        };
        let span = cfg.upper.lambda_hv - cfg.lower.lambda_hv;
        for _ in 0..ANCHOR_ROUNDS {
            let before = st.current;
            let h = if before.t + LINK_DT <= cfg.upper.t {
                LINK_DT
            } else {
                -LINK_DT
            };
            let lam_h = anchor_lambda(
                &ctx.setup,
                before.t + h,
                omega_v,
                omega_c1,
                (cfg.lower.lambda_hv, cfg.upper.lambda_hv),
                1e-4 * span.max(1.0),
            )?;
            st.link = Some(Link {
                t0: before.t,
                lambda0: before.lambda_hv,
                slope: (lam_h - before.lambda_hv) / h,
            });
            st.joint("polish", polish.clone(), 0.02)?;
            st.link = None;
            anchor(&mut st)?;
            if (st.current.t - before.t).abs() < 1e-5 {
                break;
            }
        }
    } else if !polish.is_empty() {
        st.joint("polish", polish.clone(), 0.02)?;
    }

    if matches!(cfg.strategy, Strategy::SingleSpectrum) && lam_free && dh_free {
        check_degeneracy(&st)?;
    }

    let p = st.current;
    let calculated = forward_model(&p, ctx)?;
    let (delta_a, criteria) = evaluate(measured, &calculated)?;
    let partner_delta_a = match &cfg.strategy {
        Strategy::DualTexturePair {
            partner,
            omega,
            omega_v,
            branch,
        } => {
            let c = FixedContext {
                omega: *omega,
                omega_v: *omega_v,
                branch: *branch,
                ..ctx.clone()
            };
            Some(evaluate(partner, &forward_model(&p, &c)?)?.0)
        }
        _ => None,
    };
    Ok(FitResult {
        t: p.t,
        lambda_hv: p.lambda_hv,
        lambda_interval: (p.lambda_hv, p.lambda_hv),
        dh_over_h: p.dh_over_h,
        delta_a,
        partner_delta_a,
        criteria,
        trace: st.trace,
        calculated,
    })
}

/// Profile of min over dH/H of dA along lambda_HV, bound to bound.
pub fn lambda_profile(
    st_cfg: &FitConfig,
    measured: &Spectrum,
    ctx: &FixedContext,
    at: Params,
) -> Result<Vec<(f64, f64)>> {
    let meas = normalize(&measured.to_frequency_shift()?)?;
    let st = Stager {
        cfg: st_cfg,
        models: vec![(ctx.clone(), &meas)],
        current: at,
        link: None,
        trace: Vec::new(),
    };
    profile(&st)
}

fn profile(st: &Stager) -> Result<Vec<(f64, f64)>> {
    let cfg = st.cfg;
    let (lo, hi) = (cfg.lower.lambda_hv, cfg.upper.lambda_hv);
    let lams: Vec<f64> = (0..PROFILE_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (PROFILE_POINTS - 1) as f64)
        .collect();
    lams.par_iter()
        .map(|&lam| {
            let mut s = Stager {
                cfg,
                models: st.models.clone(),
                current: Params {
                    lambda_hv: lam,
                    ..st.current
                },
                link: None,
                trace: Vec::new(),
            };
            let v = s.line("profile", Param::DhOverH, (0.0, 1.0))?;
            Ok((lam, v))
        })
        .collect()
}

fn check_degeneracy(st: &Stager) -> Result<()> {
    let prof = profile(st)?;
    let worst = prof.iter().map(|p| p.1).fold(0.0, f64::max);
    if worst <= DEGENERACY_TOL {
        return Err(Error::Degenerate {
            first: Param::LambdaHv.name().into(),
            second: Param::DhOverH.name().into(),
            tolerance: DEGENERACY_TOL,
        });
    }
    Ok(())
}

/// Sampled lambda_HV to cf-peak height map, heights in 1/kHz on the frequency axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub points: Vec<(f64, f64)>,
}

impl SensitivityMap {
    fn dump(&self) -> String {
        self.points
            .iter()
            .map(|(l, c)| format!("{l}:{c}"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Piecewise-linear inverse, extrapolated along the end segments.
    pub fn invert(&self, chi: f64) -> Result<f64> {
        let pts = &self.points;
        if pts.len() < 2 {
            return Err(Error::NonMonotoneMap { dump: self.dump() });
        }
        let rising = pts[1].1 > pts[0].1;
        if pts
            .windows(2)
            .any(|w| (w[1].1 > w[0].1) != rising || w[1].1 == w[0].1 || w[1].0 <= w[0].0)
        {
            return Err(Error::NonMonotoneMap { dump: self.dump() });
        }
        let n = pts.len();
        let k = (0..n - 1)
            .find(|&i| {
                let (a, b) = (pts[i].1, pts[i + 1].1);
                (a.min(b)..=a.max(b)).contains(&chi)
            })
            .unwrap_or(if (chi < pts[0].1) == rising { 0 } else { n - 2 });
        let ((l0, c0), (l1, c1)) = (pts[k], pts[k + 1]);
        Ok(l0 + (chi - c0) * (l1 - l0) / (c1 - c0))
    }

    pub fn height_at(&self, lambda: f64) -> Result<f64> {
        let pts = &self.points;
        let k = pts
            .windows(2)
            .position(|w| (w[0].0..=w[1].0).contains(&lambda))
            .ok_or_else(|| Error::Domain(format!("lambda_HV {lambda} outside the sampled map")))?;
        let ((l0, c0), (l1, c1)) = (pts[k], pts[k + 1]);
        Ok(c0 + (lambda - l0) * (c1 - c0) / (l1 - l0))
    }
}

/// cf-peak height in 1/kHz of a normalized reduced spectrum.
pub fn cf_height_per_khz(spec: &Spectrum) -> Result<Option<f64>> {
    let Some(peak) = cf_peak(spec)? else {
        return Ok(None);
    };
    let ob = spec
        .meta
        .omega_b
        .ok_or(Error::Spectrum("metadata `Omega_B` missing".into()))?;
    let nu = spec
        .meta
        .nu_rf
        .ok_or(Error::Spectrum("metadata `nu_rf` missing".into()))?;
    Ok(Some(peak.height / shift_to_frequency(1.0, ob, nu) * 1e3))
}

/// cf-peak heights of the forward model at each lambda_HV, evaluated in parallel.
pub fn sensitivity_map(
    base: &Params,
    ctx: &FixedContext,
    lambdas: &[f64],
) -> Result<SensitivityMap> {
    let points = lambdas
        .par_iter()
        .map(|&lam| {
            let spec = forward_model(
                &Params {
                    lambda_hv: lam,
                    ..*base
                },
                ctx,
            )?;
            let h = cf_height_per_khz(&spec)?
                .ok_or_else(|| Error::Spectrum(format!("no cf-peak at lambda_HV = {lam}")))?;
            Ok((lam, h))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityMap { points })
}

/// Default map grid: the fitted value and `steps` points either side, 1 kg/(m^3 T^2) apart.
pub fn default_lambda_grid(lambda: f64, steps: usize) -> Vec<f64> {
    (-(steps as i64)..=steps as i64)
        .map(|k| lambda + k as f64)
        .filter(|&l| l > 0.0)
        .collect()
}

/// [lambda-, lambda+] from chi(1 -+ dA) through the inverted map.
pub fn lambda_uncertainty(fit: &FitResult, map: &SensitivityMap) -> Result<(f64, f64)> {
    let chi = map.height_at(fit.lambda_hv)?;
    let a = map.invert(chi * (1.0 - fit.delta_a))?;
    let b = map.invert(chi * (1.0 + fit.delta_a))?;
    let (lo, hi) = (a.min(b), a.max(b));
    Ok((lo.min(fit.lambda_hv), hi.max(fit.lambda_hv)))
}

/// Correction for the lag between the recorded field and the absorption signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCorrection {
    /// Field lag in T (sweep rate times delay). The signal appears `lag` late along the sweep.
    pub lag: f64,
}

/// Read a field sweep, correct the lag, subtract a linear baseline and normalize.
///
/// Rows are in recording order; an increasing field is an up sweep. The result
/// is on the frequency-shift axis, or on the reduced axis when `omega_b` is given.
pub fn ingest_measured(
    path: &Path,
    correction: SweepCorrection,
    baseline_windows: &[(f64, f64)],
    omega_b: Option<f64>,
) -> Result<Spectrum> {
    ingest_text(
        &std::fs::read_to_string(path)?,
        correction,
        baseline_windows,
        omega_b,
    )
}

pub fn ingest_text(
    text: &str,
    correction: SweepCorrection,
    baseline_windows: &[(f64, f64)],
    omega_b: Option<f64>,
) -> Result<Spectrum> {
    let (axis, mut meta, x, y) = parse_csv(text)?;
    if axis != Axis::Field {
        return Err(Error::AxisMismatch(
            axis.name().into(),
            Axis::Field.name().into(),
        ));
    }
    if meta.h_l.is_none() {
        return Err(Error::MissingKey("H_L".into()));
    }
    if meta.nu_rf.is_none() {
        return Err(Error::MissingKey("nu_rf".into()));
    }
    if x.len() < 2 {
        return Err(Error::Spectrum("sweep needs at least two samples".into()));
    }
    let up = x[1] > x[0];
    if x.windows(2).any(|w| (w[1] > w[0]) != up || w[1] == w[0]) {
        return Err(Error::Spectrum("field sweep is not monotone".into()));
    }
    let shift = if up { -correction.lag } else { correction.lag };
    let mut pts: Vec<(f64, f64)> = x.iter().map(|h| h + shift).zip(y).collect();
    if !up {
        pts.reverse();
    }
    let (x, mut y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();

    let base: Vec<(f64, f64)> = x
        .iter()
        .zip(&y)
        .filter(|(h, _)| baseline_windows.iter().any(|(a, b)| (*a..=*b).contains(*h)))
        .map(|(&h, &v)| (h, v))
        .collect();
    if !baseline_windows.is_empty() {
        if base.len() < 2 {
            return Err(Error::Spectrum(
                "baseline windows hold fewer than two samples".into(),
            ));
        }
        let (slope, icpt) = linear_fit(&base);
        for (v, h) in y.iter_mut().zip(&x) {
            *v -= slope * h + icpt;
        }
    }
    meta.normalized = false;
    meta.omega_b = omega_b.or(meta.omega_b);
    let field = Spectrum::new(Axis::Field, x, y, meta)?;
    let freq = field.to_frequency_shift()?;
    match omega_b {
        Some(_) => normalize(&freq.to_reduced()?),
        None => normalize(&freq),
    }
}

fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Ratio of integrated absorptions, superfluid over normal, of raw spectra.
pub fn susceptibility_from_areas(superfluid: &Spectrum, normal: &Spectrum) -> Result<f64> {
    if superfluid.meta.normalized || normal.meta.normalized {
        return Err(Error::Spectrum(
            "susceptibility needs raw, un-normalized spectra".into(),
        ));
    }
    if superfluid.axis != normal.axis {
        return Err(Error::AxisMismatch(
            superfluid.axis.name().into(),
            normal.axis.name().into(),
        ));
    }
    let n = normal.integral();
    if !(n > 0.0) {
        return Err(Error::NonPositiveArea(n));
    }
    Ok(superfluid.integral() / n)
}
