//! Continuation scans for the textural transitions.
//!
//! Omega_c1 (simple to parted) is continuous and is located by the appearance
//! of a cf-peak. Omega_c2 (parted to extended) is first order: each branch is
//! followed by warm starts until it disappears, which happens at different
//! control values on the up and down sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cf_peak_above, extract};
use crate::flow::FlowState;
use crate::material::MaterialState;
use crate::setup::Setup;
use crate::texture::{initial_guess, minimize_traced, Branch, Texture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    /// Branch a sweep in this direction starts on.
    pub fn start_branch(self) -> Branch {
        match self {
            Direction::Up => Branch::Parted,
            Direction::Down => Branch::Extended,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(Error::Domain(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanOptions {
    /// Continuation step of the control variable.
    pub step: f64,
    /// Bracket width at which bisection stops. Zero keeps the step bracket.
    pub tolerance: f64,
    /// Broadening used for cf-peak detection.
    pub dh_over_h: f64,
    /// Normalized cf-peak height that counts as detected.
    pub cf_threshold: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self::omega()
    }
}

impl ScanOptions {
    pub fn omega() -> Self {
        ScanOptions {
            step: 0.05,
            tolerance: 0.0,
            dh_over_h: 8.8e-4,
            cf_threshold: crate::features::CF_MIN_HEIGHT,
        }
    }

    pub fn temperature() -> Self {
        ScanOptions {
            step: 0.005,
            ..Self::omega()
        }
    }
}

/// Which quantity a sweep varies; the other two are held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub control: Control,
    pub t: f64,
    pub omega: f64,
    pub omega_v: f64,
    pub lambda_hv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Omega,
    Temperature,
}

impl Sweep {
    pub fn omega(t: f64, omega_v: f64, lambda_hv: Option<f64>) -> Self {
        Sweep {
            control: Control::Omega,
            t,
            omega: omega_v,
            omega_v,
            lambda_hv,
        }
    }

    pub fn temperature(omega: f64, omega_v: f64, lambda_hv: Option<f64>) -> Self {
        Sweep {
            control: Control::Temperature,
            t: 0.5,
            omega,
            omega_v,
            lambda_hv,
        }
    }

    fn states(&self, setup: &Setup, x: f64) -> Result<(MaterialState, FlowState)> {
        let (t, omega) = match self.control {
            Control::Omega => (self.t, x),
            Control::Temperature => (x, self.omega),
        };
        Ok((
            setup.material(t, self.lambda_hv)?,
            setup.flow(omega, self.omega_v)?,
        ))
    }
}

/// One converged continuation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub control: f64,
    pub branch: Branch,
    pub energy: f64,
    /// Energy of the warm start at this control value.
    pub start_energy: f64,
    /// Height of the strongest maximum in the cf window, with no height gate.
    pub cf_height: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// Last control value on the starting side.
    pub before: f64,
    /// First control value past the transition.
    pub after: f64,
}

impl Bracket {
    pub fn mid(&self) -> f64 {
        0.5 * (self.before + self.after)
    }

    pub fn width(&self) -> f64 {
        (self.after - self.before).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Result {
    pub omega_c1: f64,
    pub uncertainty: f64,
    /// Ungated cf-window peak heights at the two ends of the final bracket.
    pub cf_jump: (Option<f64>, Option<f64>),
    pub path: Vec<PathPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2Result {
    pub direction: Direction,
    pub bracket: Bracket,
    /// Ungated cf-window peak heights on either side of the bracket.
    pub cf_jump: (Option<f64>, Option<f64>),
    pub path: Vec<PathPoint>,
}

/// Converged step from `start`, with the features used for branch tracking.
struct Step {
    tex: Texture,
    point: PathPoint,
    cf_gated: bool,
    collision: bool,
}

fn step(setup: &Setup, sweep: &Sweep, x: f64, start: &Texture, opts: &ScanOptions) -> Result<Step> {
    let (mat, flow) = sweep.states(setup, x)?;
    let (tex, trace) = minimize_traced(start, &mat, &flow, setup.field(), &setup.solver)?;
    if !tex.converged {
        return Err(Error::Unconverged {
            iterations: tex.iterations,
            grad_norm: tex.grad_norm,
        });
    }
    let spec = setup.spectrum(&tex, &mat, opts.dh_over_h)?;
    let cf_height = cf_peak_above(&spec, 0.0)?.map(|p| p.height);
    let cf_gated = cf_height.is_some_and(|h| h >= opts.cf_threshold);
    let collision = extract(&spec)?.collision;
    let point = PathPoint {
        control: x,
        branch: tex.branch,
        energy: tex.energy,
        start_energy: trace[0],
        cf_height,
    };
    Ok(Step {
        tex,
        point,
        cf_gated,
        collision,
    })
}

fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::Domain(format!(
            "bad scan range {from}..{to} step {step}"
        )));
    }
    let n = ((to - from).abs() / step + 1e-9).floor() as usize;
    let sign = if to >= from { 1.0 } else { -1.0 };
    let mut xs: Vec<f64> = (0..=n).map(|k| from + sign * step * k as f64).collect();
    if (xs[n] - to).abs() > 1e-9 * step {
        xs.push(to);
    }
    Ok(xs)
}

/// Smallest Omega on an increasing grid where the continued texture shows a cf-peak.
pub fn scan_omega_c1(
    setup: &Setup,
    t: f64,
    omega_v: f64,
    lambda_hv: Option<f64>,
    omegas: &[f64],
    opts: &ScanOptions,
) -> Result<C1Result> {
    if omegas.len() < 2 || omegas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "Omega grid must be increasing with at least two points".into(),
        ));
    }
    let sweep = Sweep::omega(t, omega_v, lambda_hv);
    let not_found = Error::NotFound {
        from: omegas[0],
        to: omegas[omegas.len() - 1],
    };
    let mut tex = initial_guess(Branch::Simple, setup.grid()?);
    let mut path = Vec::new();
    for (i, &x) in omegas.iter().enumerate() {
        let s = step(setup, &sweep, x, &tex, opts)?;
        path.push(s.point);
        if s.cf_gated {
            if i == 0 {
                return Err(not_found);
            }
            let mut lo = omegas[i - 1];
            let mut hi = x;
            let mut cf_lo = path[i - 1].cf_height;
            let mut cf_hi = path[i].cf_height;
            while opts.tolerance > 0.0 && hi - lo > opts.tolerance {
                let mid = 0.5 * (lo + hi);
                let m = step(setup, &sweep, mid, &tex, opts)?;
                if m.cf_gated {
                    hi = mid;
                    cf_hi = m.point.cf_height;
                } else {
                    lo = mid;
                    cf_lo = m.point.cf_height;
                    tex = m.tex;
                }
                path.push(m.point);
            }
            path.sort_by(|a, b| a.control.total_cmp(&b.control));
            return Ok(C1Result {
                omega_c1: hi,
                uncertainty: hi - lo,
                cf_jump: (cf_lo, cf_hi),
                path,
            });
        }
        tex = s.tex;
    }
    Err(not_found)
}

fn is_extended(tex: &Texture) -> bool {
    tex.ninety_crossing().is_some()
}

fn continue_c2(
    setup: &Setup,
    sweep: &Sweep,
    range: (f64, f64),
    direction: Direction,
    opts: &ScanOptions,
) -> Result<C2Result> {
    let xs = grid(range.0, range.1, opts.step)?;
    let want = direction.start_branch();
    let on_start = |t: &Texture| is_extended(t) == (want == Branch::Extended);
    let mut prev = step(
        setup,
        sweep,
        xs[0],
        &initial_guess(want, setup.grid()?),
        opts,
    )?;
    if !on_start(&prev.tex) {
        return Err(Error::Domain(format!(
            "no {want} texture at the start of the sweep ({})",
            xs[0]
        )));
    }
    let mut path = vec![prev.point.clone()];
    for &x in &xs[1..] {
        let next = step(setup, sweep, x, &prev.tex, opts)?;
        if next.collision {
            let other = match want {
                Branch::Extended => Branch::Parted,
                _ => Branch::Extended,
            };
            let alt = step(setup, sweep, x, &initial_guess(other, setup.grid()?), opts)?;
            return Err(Error::AmbiguousBranch {
                at: x,
                candidates: Box::new([next.tex, alt.tex]),
            });
        }
        path.push(next.point.clone());
        if on_start(&next.tex) {
            prev = next;
            continue;
        }
        let mut before = prev.point.control;
        let mut after = x;
        let mut cf_after = next.point.cf_height;
        while opts.tolerance > 0.0 && (after - before).abs() > opts.tolerance {
            let mid = 0.5 * (before + after);
            let m = step(setup, sweep, mid, &prev.tex, opts)?;
            path.push(m.point.clone());
            if on_start(&m.tex) {
                before = mid;
                prev = m;
            } else {
                after = mid;
                cf_after = m.point.cf_height;
            }
        }
        return Ok(C2Result {
            direction,
            bracket: Bracket { before, after },
            cf_jump: (prev.point.cf_height, cf_after),
            path,
        });
    }
    Err(Error::NotFound {
        from: range.0,
        to: range.1,
    })
}

/// Stability limit of the starting branch when Omega is swept from `range.0` to `range.1`.
pub fn scan_omega_c2(
    setup: &Setup,
    t: f64,
    omega_v: f64,
    lambda_hv: Option<f64>,
    range: (f64, f64),
    direction: Direction,
    opts: &ScanOptions,
) -> Result<C2Result> {
    check_direction(range, direction)?;
    continue_c2(
        setup,
        &Sweep::omega(t, omega_v, lambda_hv),
        range,
        direction,
        opts,
    )
}

/// As [`scan_omega_c2`] with temperature as the control; `Down` is cooling.
pub fn scan_temperature_c2(
    setup: &Setup,
    omega: f64,
    omega_v: f64,
    lambda_hv: Option<f64>,
    range: (f64, f64),
    direction: Direction,
    opts: &ScanOptions,
) -> Result<C2Result> {
    check_direction(range, direction)?;
    continue_c2(
        setup,
        &Sweep::temperature(omega, omega_v, lambda_hv),
        range,
        direction,
        opts,
    )
}

fn check_direction(range: (f64, f64), direction: Direction) -> Result<()> {
    let up = range.1 > range.0;
    if up != (direction == Direction::Up) {
        return Err(Error::Domain(format!(
            "range {}..{} does not run {:?}",
            range.0, range.1, direction
        )));
    }
    Ok(())
}

/// Control value where the parted and extended energies cross, from the two sweep paths.
///
/// Only points with the same control value on both paths are compared.
pub fn energy_crossing(up: &[PathPoint], down: &[PathPoint]) -> Option<f64> {
    let on = |p: &PathPoint, b: Branch| (p.branch == Branch::Extended) == (b == Branch::Extended);
    let mut pairs: Vec<(f64, f64)> = up
        .iter()
        .filter(|p| on(p, Branch::Parted))
        .filter_map(|p| {
            down.iter()
                .find(|q| on(q, Branch::Extended) && (q.control - p.control).abs() < 1e-9)
                .map(|q| (p.control, p.energy - q.energy))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.windows(2).find_map(|w| {
        let ((x0, d0), (x1, d1)) = (w[0], w[1]);
        if d0 == 0.0 {
            Some(x0)
        } else if d0.signum() != d1.signum() {
            Some(x0 + (x1 - x0) * d0 / (d0 - d1))
        } else {
            None
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub control: Control,
    pub omega_c1: Option<f64>,
    pub omega_c1_uncertainty: Option<f64>,
    /// Up-sweep stability limit (bracket midpoint).
    pub c2_up: f64,
    pub c2_down: f64,
    pub hysteresis_width: f64,
    pub energy_crossing: Option<f64>,
    pub up: C2Result,
    pub down: C2Result,
}

impl TransitionReport {
    pub fn new(control: Control, c1: Option<&C1Result>, up: C2Result, down: C2Result) -> Self {
        let c2_up = up.bracket.mid();
        let c2_down = down.bracket.mid();
        TransitionReport {
            control,
            omega_c1: c1.map(|c| c.omega_c1),
            omega_c1_uncertainty: c1.map(|c| c.uncertainty),
            c2_up,
            c2_down,
            hysteresis_width: c2_up - c2_down,
            energy_crossing: energy_crossing(&up.path, &down.path),
            up,
            down,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Path table of both sweeps.
    pub fn path_csv(&self) -> String {
        let mut out = String::from("sweep,control,branch,energy,start_energy,cf_height\n");
        for (name, r) in [("up", &self.up), ("down", &self.down)] {
            for p in &r.path {
                let cf = p.cf_height.map(|h| h.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{name},{},{},{},{},{cf}\n",
                    p.control, p.branch, p.energy, p.start_energy
                ));
            }
        }
        out
    }
}

/// Up sweep from `range.0`, then a down sweep from the first grid point past the
/// up transition. Both use the same grid, so the energy crossing can be read off.
pub fn omega_hysteresis(
    setup: &Setup,
    t: f64,
    omega_v: f64,
    lambda_hv: Option<f64>,
    range: (f64, f64),
    opts: &ScanOptions,
) -> Result<TransitionReport> {
    let (lo, hi) = range;
    let up = scan_omega_c2(setup, t, omega_v, lambda_hv, (lo, hi), Direction::Up, opts)?;
    // The extended branch need not exist up to `hi`; come back down from where it appeared.
    let top = lo + ((up.bracket.after - lo) / opts.step).ceil() * opts.step;
    let down = scan_omega_c2(
        setup,
        t,
        omega_v,
        lambda_hv,
        (top, lo),
        Direction::Down,
        opts,
    )?;
    Ok(TransitionReport::new(Control::Omega, None, up, down))
}
