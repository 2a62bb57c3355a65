//! Texture minimization.
//!
//! Newton iterations on the exact banded Hessian, with a Levenberg shift when
//! the Hessian is not positive definite, a cap on the angle change per step,
//! and a backtracking line search. The cap keeps each step local, so a warm
//! start stays on its branch for as long as that branch is a local minimum.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::energy::{Band, Model};
use super::{wall_angle, Branch, RadialGrid, Texture};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::material::MaterialState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Max-norm of the gradient in units of the energy scale per radian.
    pub gtol: f64,
    /// Relative energy change over the last accepted step.
    pub etol: f64,
    pub max_iter: usize,
    /// Largest change of any angle in one step, rad.
    pub max_step: f64,
    /// Hold the wall angle at its initial value (sin^2 = 0.8). When false it is set by the surface terms.
    pub pin_wall: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gtol: 1e-9,
            etol: 1e-12,
            max_iter: 50_000,
            max_step: 0.2,
            pin_wall: false,
        }
    }
}

/// Consecutive accepted steps without a relative gain of `FLAT_GAIN` before giving up.
const FLAT_STEP_LIMIT: usize = 50;
const FLAT_GAIN: f64 = 1e-14;

/// In-plane angle the surface term prefers at the branch's wall angle.
fn guess_alpha(branch: Branch) -> f64 {
    match branch {
        Branch::Simple | Branch::Parted => 120f64.to_radians(),
        Branch::Extended => 60f64.to_radians(),
    }
}

/// Straight-line beta from the axis to the branch's wall angle, constant alpha.
pub fn initial_guess(branch: Branch, grid: RadialGrid) -> Texture {
    let end = match branch {
        Branch::Simple | Branch::Parted => wall_angle(),
        Branch::Extended => std::f64::consts::PI - wall_angle(),
    };
    let n = grid.len();
    let beta = (0..n).map(|i| end * i as f64 / grid.cells as f64).collect();
    let alpha = vec![guess_alpha(branch); n];
    Texture::from_angles(grid, alpha, beta, branch).expect("lengths match the grid")
}

/// Hex digest identifying the physics of a minimization.
pub fn params_hash(
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
    grid: RadialGrid,
    opts: &SolverOptions,
) -> String {
    let payload = serde_json::json!({
        "t": mat.t, "pressure": mat.pressure, "coeffs": mat.coeffs,
        "flow": flow, "field": field, "grid": grid, "opts": opts,
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

pub fn minimize(
    initial: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
    opts: &SolverOptions,
) -> Result<Texture> {
    minimize_traced(initial, mat, flow, field, opts).map(|(t, _)| t)
}

/// As [`minimize`], also returning the energy (J/m) after every accepted step.
pub fn minimize_traced(
    initial: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
    opts: &SolverOptions,
) -> Result<(Texture, Vec<f64>)> {
    if initial.beta[0] != 0.0 {
        return Err(Error::Domain(
            "texture must have beta = 0 on the axis".into(),
        ));
    }
    let wall = initial.wall_beta();
    if opts.pin_wall && !((wall.sin().powi(2) - 0.8).abs() < 1e-9) {
        return Err(Error::Domain(format!(
            "wall angle must satisfy sin^2(beta) = 0.8, got {wall}"
        )));
    }
    let model = Model::new(initial.grid, mat, flow, field)?;
    let mut alpha = initial.alpha.clone();
    let mut beta = initial.beta.clone();
    let mut band = Band::default();
    let mut mu = 0.0f64;
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut gnorm;
    let mut iterations = 0;
    let mut flat_steps = 0;
    let mut flat_ref = f64::INFINITY;

    let (mut f, mut g) = model.derivatives(&alpha, &beta, Some(&mut band));
    trace.push(f * model.scale);
    loop {
        pin_ends(&mut g, &mut band, opts.pin_wall);
        gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gnorm < opts.gtol && last_change < opts.etol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let diag_max = (0..band.len())
            .map(|i| band.get(i, i).abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        let (factor, used_mu) = factorize(&band, mu, diag_max);
        mu = used_mu;
        let mut p: Vec<f64> = g.iter().map(|x| -x).collect();
        factor.solve(&mut p);
        let pmax = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if pmax > opts.max_step {
            let s = opts.max_step / pmax;
            p.iter_mut().for_each(|x| *x *= s);
        }
        let slope: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let (a2, b2) = step(&alpha, &beta, &p, t);
            let f2 = model.breakdown(&a2, &b2).total / model.scale;
            let armijo = f2 <= f + 1e-4 * t * slope;
            // Below round-off the Armijo test is meaningless; accept any non-increase.
            let tiny = -slope * t < 1e-13 * (f.abs() + 1.0) && f2 <= f;
            if armijo || tiny {
                accepted = Some((a2, b2, f2));
                break;
            }
            t *= 0.5;
        }
        let Some((a2, b2, f2)) = accepted else {
            // No descent along a Newton direction: stationary to working precision.
            converged = gnorm < 1e3 * opts.gtol;
            break;
        };
        mu = if t == 1.0 {
            mu * 0.25
        } else {
            (mu * 4.0).max(1e-8)
        };
        if mu < 1e-14 {
            mu = 0.0;
        }
        last_change = (f - f2).abs() / f2.abs().max(1e-300);
        if flat_ref - f2 > FLAT_GAIN * f2.abs() {
            flat_ref = f2;
            flat_steps = 0;
        } else {
            flat_steps += 1;
        }
        if flat_steps >= FLAT_STEP_LIMIT {
            // Steps no longer lower the energy: same verdict as a failed line search.
            converged = gnorm < 1e3 * opts.gtol;
            break;
        }
        alpha = a2;
        beta = b2;
        let (fn_, gn) = model.derivatives(&alpha, &beta, Some(&mut band));
        f = fn_;
        g = gn;
        trace.push(f * model.scale);
    }

    let mut tex = Texture::from_angles(initial.grid, alpha, beta, initial.branch)?;
    let diag_max = (0..band.len())
        .map(|i| band.get(i, i).abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let shift = vec![1e-12 * diag_max; band.len()];
    tex.stable = band.cholesky(&shift).is_some();
    tex.energy = f * model.scale;
    tex.converged = converged;
    tex.iterations = iterations;
    tex.grad_norm = gnorm;
    tex.branch = tex.classify();
    tex.params_hash = params_hash(mat, flow, field, initial.grid, opts);
    Ok((tex, trace))
}

fn step(alpha: &[f64], beta: &[f64], p: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let a = alpha
        .iter()
        .enumerate()
        .map(|(i, x)| x + t * p[2 * i])
        .collect();
    let b = beta
        .iter()
        .enumerate()
        .map(|(i, x)| x + t * p[2 * i + 1])
        .collect();
    (a, b)
}

/// beta_0 (and beta_M if `wall`) are fixed: zero their gradient and decouple their Hessian rows.
fn pin_ends(g: &mut [f64], band: &mut Band, wall: bool) {
    let n = g.len();
    g[1] = 0.0;
    let one = band.get(0, 0).abs().max(1e-300);
    band.rows[1] = [one, 0.0, 0.0, 0.0];
    for i in 2..n.min(5) {
        band.rows[i][i - 1] = 0.0;
    }
    if wall {
        g[n - 1] = 0.0;
        let one = band.get(n - 2, n - 2).abs().max(1e-300);
        band.rows[n - 1] = [one, 0.0, 0.0, 0.0];
    }
}

/// Cholesky factor of `H + mu diag(|H_ii|)`, raising `mu` until it exists.
fn factorize(band: &Band, mu: f64, diag_max: f64) -> (Band, f64) {
    let mut mu = mu;
    loop {
        let shift: Vec<f64> = (0..band.len())
            .map(|i| mu * band.get(i, i).abs().max(1e-10 * diag_max))
            .collect();
        if let Some(l) = band.cholesky(&shift) {
            return (l, mu);
        }
        mu = if mu == 0.0 { 1e-8 } else { mu * 10.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmr::GAMMA_HE3;

    const FIELD: f64 = 965e3 / GAMMA_HE3;

    fn solve(
        branch: Branch,
        t: f64,
        lambda: f64,
        omega: f64,
        omega_v: f64,
        opts: &SolverOptions,
    ) -> (Texture, Vec<f64>) {
        let mat = MaterialState::at_29_bar(t, Some(lambda)).unwrap();
        let flow = FlowState::new(omega, omega_v, 3e-3).unwrap();
        let grid = RadialGrid::new(3e-3, 15e-6).unwrap();
        minimize_traced(&initial_guess(branch, grid), &mat, &flow, FIELD, opts).unwrap()
    }

    #[test]
    fn guesses_end_on_the_wall_angles() {
        let grid = RadialGrid::new(3e-3, 15e-6).unwrap();
        let p = initial_guess(Branch::Parted, grid).wall_beta().to_degrees();
        let e = initial_guess(Branch::Extended, grid)
            .wall_beta()
            .to_degrees();
        assert!((p - 63.4).abs() < 0.1 && (e - 116.6).abs() < 0.1);
    }

    #[test]
    fn energy_trace_never_increases() {
        let (tex, trace) = solve(
            Branch::Parted,
            0.31,
            3.1,
            0.9,
            0.1,
            &SolverOptions::default(),
        );
        assert!(tex.converged && tex.stable);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(tex.branch, Branch::Parted);
    }

    #[test]
    fn zero_counterflow_relaxes_to_simple() {
        for b in [Branch::Simple, Branch::Parted, Branch::Extended] {
            let (tex, _) = solve(b, 0.3, 3.0, 0.6, 0.6, &SolverOptions::default());
            assert!(tex.converged);
            assert_eq!(tex.branch, Branch::Simple, "from {b}");
            assert!(tex.beta.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }

    #[test]
    fn parted_and_extended_coexist() {
        let opts = SolverOptions::default();
        let (p, _) = solve(Branch::Parted, 0.31, 3.1, 0.9, 0.1, &opts);
        let (e, _) = solve(Branch::Extended, 0.31, 3.1, 0.9, 0.1, &opts);
        assert!(p.converged && e.converged && p.stable && e.stable);
        assert_eq!((p.branch, e.branch), (Branch::Parted, Branch::Extended));
        assert!((p.energy - e.energy).abs() > 1e-4 * p.energy.abs());
    }

    #[test]
    fn boundary_invariants_hold() {
        for b in [Branch::Simple, Branch::Parted, Branch::Extended] {
            let (tex, _) = solve(b, 0.36, 5.9, 0.7, 0.0, &SolverOptions::default());
            assert_eq!(tex.beta[0], 0.0);
            let pi = std::f64::consts::PI;
            assert!(tex.beta.iter().all(|&x| (0.0..=pi).contains(&x)));
        }
    }

    #[test]
    fn pinned_wall_stays_put() {
        let pinned = SolverOptions {
            pin_wall: true,
            ..SolverOptions::default()
        };
        let (p, _) = solve(Branch::Parted, 0.31, 3.1, 0.9, 0.1, &pinned);
        assert!(p.converged);
        assert_eq!(p.wall_beta(), wall_angle());
        let (e, _) = solve(Branch::Extended, 0.31, 3.1, 0.9, 0.1, &pinned);
        assert_eq!(e.wall_beta(), std::f64::consts::PI - wall_angle());
        let (free, _) = solve(
            Branch::Parted,
            0.31,
            3.1,
            0.9,
            0.1,
            &SolverOptions::default(),
        );
        assert!((free.wall_beta() - wall_angle()).abs() > 1e-6);
    }

    #[test]
    fn pinned_wall_rejects_off_wall_guess() {
        let grid = RadialGrid::new(3e-3, 1e-4).unwrap();
        let mut g = initial_guess(Branch::Parted, grid);
        *g.beta.last_mut().unwrap() = 1.0;
        let mat = MaterialState::at_29_bar(0.3, Some(3.0)).unwrap();
        let flow = FlowState::new(0.5, 0.0, 3e-3).unwrap();
        let pinned = SolverOptions {
            pin_wall: true,
            ..SolverOptions::default()
        };
        assert!(minimize(&g, &mat, &flow, FIELD, &pinned).is_err());
    }

    #[test]
    fn iteration_cap_flags_unconverged() {
        let opts = SolverOptions {
            max_iter: 3,
            ..SolverOptions::default()
        };
        let (tex, _) = solve(Branch::Parted, 0.31, 3.1, 0.9, 0.1, &opts);
        assert!(!tex.converged);
        assert_eq!(tex.iterations, 3);
    }
}
