//! Free energy of an axisymmetric texture reduced to one radial dimension.
//!
//! With n-hat = sin(b)cos(a) r + sin(b)sin(a) phi + cos(b) z, the field along z
//! and the counterflow along phi, every bulk density is independent of phi.
//! The cross-section integral uses the cell-midpoint rule: each cell
//! contributes `2 pi r_m h e(a_m, b_m, a', b')` with midpoint angles and
//! difference-quotient slopes. No term is evaluated at r = 0.

use serde::{Deserialize, Serialize};

use super::jet::{Jet, Real};
use super::{RadialGrid, Texture};
use crate::error::{Error, Result};
use crate::flow::{counterflow, FlowState};
use crate::material::{MaterialState, TexturalCoefficients};

const SQRT15: f64 = 3.872_983_346_207_417;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Bulk energy densities, J/m^3.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DensityTerms {
    pub dh: f64,
    pub dv: f64,
    pub g: f64,
    pub hv: f64,
    pub total: f64,
}

/// Energies per unit cell length, J/m.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub f_dh: f64,
    pub f_dv: f64,
    pub f_g: f64,
    pub f_hv: f64,
    pub f_sh: f64,
    pub f_sg: f64,
    pub total: f64,
}

/// Densities (dipole-field, dipole-velocity, gradient, field-velocity) at one point.
///
/// `q` stands for sin(b)/r; the caller supplies its r -> 0 limit on the axis.
#[allow(clippy::too_many_arguments)]
fn density<T: Real>(
    c: &TexturalCoefficients,
    h2: f64,
    v2: f64,
    a: T,
    b: T,
    ap: T,
    bp: T,
    q: T,
) -> [T; 4] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let sb2 = sb * sb;
    let s2a = sa * ca * 2.0;
    let c2a = ca * ca - sa * sa;
    let s2b = sb * cb * 2.0;
    let c2b = cb * cb - sb * sb;

    let v1 = ap * s2a * sb2 * -1.25 + bp * sb * cb * ca * ca * 2.5 + sb * q * c2a * 1.25;
    let v2_ = ap * sb2 * c2a * 1.25
        + bp * (s2a * s2b * 0.625 - sb * (SQRT15 / 4.0))
        + s2a * sb * q * 1.25;
    let v3 = -(ap * sb * (sa * cb * 5.0 + ca * SQRT15)) * 0.25
        + bp * (ca * c2b * 5.0 - sa * cb * SQRT15) * 0.25
        + q * (ca * cb * 5.0 - sa * SQRT15) * 0.25;
    let g = (v1.sqr() + v2_.sqr() + v3.sqr()) * c.lambda_g1
        + (bp.sqr() + sb2 * ap.sqr() + q.sqr()) * (5.0 * c.lambda_g2);

    let dh = cb.sqr() * (-c.a * h2);
    let dv = sb2 * sa.sqr() * (-c.lambda_dv * v2);
    let hv = sb2 * (sa * cb * 5.0 + ca * SQRT15).sqr() * (-c.lambda_hv * h2 * v2 / 16.0);
    [dh, dv, g, hv]
}

/// Surface energy per unit wall area, J/m^2, for wall angles (a, b) and normal -r.
fn surface<T: Real>(c: &TexturalCoefficients, h2: f64, a: T, b: T) -> T {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    (sb * sb) * (sa * SQRT15 - ca * cb * 5.0).sqr() * (-c.d * h2 / 16.0)
}

/// Surface-gradient energy per unit wall area, `lambda_SG s_i R_ai d_j R_aj` with s = -r.
///
/// Takes the wall angles, the radial slopes there and `inv_r = 1/R`. In the
/// frame at phi = 0 the azimuthal derivative of R is the commutator with the
/// generator of rotations about z, which gives the `inv_r` terms below.
fn surface_gradient<T: Real>(c: &TexturalCoefficients, a: T, b: T, ap: T, bp: T, inv_r: f64) -> T {
    let (cos_t, sin_t) = (-0.25, SQRT15 / 4.0);
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let n = [sb * ca, sb * sa, cb];
    let dn = [
        (cb * ca * bp) - (sb * sa * ap),
        (cb * sa * bp) + (sb * ca * ap),
        -(sb * bp),
    ];
    let k = 1.0 - cos_t;
    // Columns 0 of R and dR/dr, plus R_01 and R_11.
    let r00 = n[0] * n[0] * k + cos_t;
    let r10 = n[1] * n[0] * k + n[2] * sin_t;
    let r20 = n[2] * n[0] * k - n[1] * sin_t;
    let r01 = n[0] * n[1] * k - n[2] * sin_t;
    let r11 = n[1] * n[1] * k + cos_t;
    let d00 = dn[0] * n[0] * (2.0 * k);
    let d10 = (dn[1] * n[0] + n[1] * dn[0]) * k + dn[2] * sin_t;
    let d20 = (dn[2] * n[0] + n[2] * dn[0]) * k - dn[1] * sin_t;
    let v0 = d00 + (r00 - r11) * inv_r;
    let v1 = d10 + (r01 + r10) * inv_r;
    let v2 = d20 + r20 * inv_r;
    (r00 * v0 + r10 * v1 + r20 * v2) * (-c.lambda_sg)
}

/// Bulk density at radius `r` for local angles and slopes.
#[allow(clippy::too_many_arguments)]
pub fn energy_density(
    r: f64,
    alpha: f64,
    beta: f64,
    dalpha: f64,
    dbeta: f64,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
) -> Result<DensityTerms> {
    let v = counterflow(r, flow)?;
    let q = if r > 0.0 {
        beta.sin() / r
    } else if beta.sin().abs() < 1e-12 {
        dbeta * beta.cos()
    } else {
        return Err(Error::Domain("beta must vanish on the axis".into()));
    };
    let [dh, dv, g, hv] = density(
        &mat.coeffs,
        field * field,
        v * v,
        alpha,
        beta,
        dalpha,
        dbeta,
        q,
    );
    Ok(DensityTerms {
        dh,
        dv,
        g,
        hv,
        total: dh + dv + g + hv,
    })
}

/// The discretized functional for one (material, flow, field).
#[derive(Debug, Clone)]
pub(crate) struct Model {
    pub coeffs: TexturalCoefficients,
    pub h2: f64,
    pub grid: RadialGrid,
    /// Squared counterflow at each cell midpoint.
    pub v2: Vec<f64>,
    /// Energy unit for the solver, J/m.
    pub scale: f64,
}

impl Model {
    pub fn new(
        grid: RadialGrid,
        mat: &MaterialState,
        flow: &FlowState,
        field: f64,
    ) -> Result<Model> {
        if (grid.radius - flow.radius).abs() > 1e-12 * flow.radius {
            return Err(Error::Domain(format!(
                "grid radius {} differs from cell radius {}",
                grid.radius, flow.radius
            )));
        }
        if !(field.is_finite() && field >= 0.0) {
            return Err(Error::Domain(format!(
                "field must be non-negative, got {field}"
            )));
        }
        let h = grid.step();
        let v2 = (0..grid.cells)
            .map(|m| counterflow((m as f64 + 0.5) * h, flow).map(|v| v * v))
            .collect::<Result<Vec<_>>>()?;
        let h2 = field * field;
        let c = mat.coeffs;
        let area = std::f64::consts::PI * grid.radius * grid.radius;
        let scale = [
            c.a * h2 * area,
            5.0 * c.lambda_g2 * TWO_PI,
            c.d * h2 * TWO_PI * grid.radius,
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        Ok(Model {
            coeffs: c,
            h2,
            grid,
            v2,
            scale,
        })
    }

    fn cell_inputs(&self, m: usize, alpha: &[f64], beta: &[f64]) -> [f64; 4] {
        let h = self.grid.step();
        [
            0.5 * (alpha[m] + alpha[m + 1]),
            0.5 * (beta[m] + beta[m + 1]),
            (alpha[m + 1] - alpha[m]) / h,
            (beta[m + 1] - beta[m]) / h,
        ]
    }

    /// Wall angles and the slopes of the last cell.
    fn wall_inputs(&self, alpha: &[f64], beta: &[f64]) -> [f64; 4] {
        let n = self.grid.cells;
        let h = self.grid.step();
        [
            alpha[n],
            beta[n],
            (alpha[n] - alpha[n - 1]) / h,
            (beta[n] - beta[n - 1]) / h,
        ]
    }

    fn weight(&self, m: usize) -> (f64, f64) {
        let h = self.grid.step();
        let r = (m as f64 + 0.5) * h;
        (TWO_PI * r * h, 1.0 / r)
    }

    pub fn breakdown(&self, alpha: &[f64], beta: &[f64]) -> EnergyBreakdown {
        let mut parts = [Neumaier::default(); 4];
        for m in 0..self.grid.cells {
            let [a, b, ap, bp] = self.cell_inputs(m, alpha, beta);
            let (w, inv_r) = self.weight(m);
            let d = density(
                &self.coeffs,
                self.h2,
                self.v2[m],
                a,
                b,
                ap,
                bp,
                b.sin() * inv_r,
            );
            for (p, x) in parts.iter_mut().zip(d) {
                p.add(w * x);
            }
        }
        let n = self.grid.cells;
        let f_sh = surface(&self.coeffs, self.h2, alpha[n], beta[n]) * TWO_PI * self.grid.radius;
        let [a, b, ap, bp] = self.wall_inputs(alpha, beta);
        let f_sg = surface_gradient(&self.coeffs, a, b, ap, bp, 1.0 / self.grid.radius)
            * TWO_PI
            * self.grid.radius;
        let [f_dh, f_dv, f_g, f_hv] = parts.map(|p| p.sum());
        let mut total = Neumaier::default();
        for x in [f_dh, f_dv, f_g, f_hv, f_sh, f_sg] {
            total.add(x);
        }
        EnergyBreakdown {
            f_dh,
            f_dv,
            f_g,
            f_hv,
            f_sh,
            f_sg,
            total: total.sum(),
        }
    }

    /// Energy, gradient and (optionally) banded Hessian in the interleaved
    /// ordering `z = (a_0, b_0, a_1, b_1, ...)`, all divided by `scale`.
    pub fn derivatives(
        &self,
        alpha: &[f64],
        beta: &[f64],
        hess: Option<&mut Band>,
    ) -> (f64, Vec<f64>) {
        let n = self.grid.cells;
        let h = self.grid.step();
        let mut grad = vec![0.0; 2 * (n + 1)];
        let mut e = Neumaier::default();
        let mut hess = hess;
        if let Some(hb) = hess.as_deref_mut() {
            hb.reset(2 * (n + 1));
        }
        // d(local)/d(node) for local = (a_m, b_m, a', b'), node = (a_i, b_i, a_i+1, b_i+1).
        let jac = [
            [0.5, 0.0, 0.5, 0.0],
            [0.0, 0.5, 0.0, 0.5],
            [-1.0 / h, 0.0, 1.0 / h, 0.0],
            [0.0, -1.0 / h, 0.0, 1.0 / h],
        ];
        for m in 0..n {
            let x = self.cell_inputs(m, alpha, beta);
            let (w, inv_r) = self.weight(m);
            let wt = w / self.scale;
            let [a, b, ap, bp] = [0, 1, 2, 3].map(|i| Jet::var(x[i], i));
            let q = b.sin_cos().0 * inv_r;
            let d = density(&self.coeffs, self.h2, self.v2[m], a, b, ap, bp, q);
            let f = d[0] + d[1] + d[2] + d[3];
            e.add(wt * f.v);
            for k in 0..4 {
                let gk: f64 = (0..4).map(|l| f.g[l] * jac[l][k]).sum();
                grad[2 * m + k] += wt * gk;
            }
            if let Some(hb) = hess.as_deref_mut() {
                for k in 0..4 {
                    for kk in 0..=k {
                        let mut s = 0.0;
                        for l in 0..4 {
                            for ll in 0..4 {
                                s += jac[l][k] * f.h[l][ll] * jac[ll][kk];
                            }
                        }
                        hb.add(2 * m + k, 2 * m + kk, wt * s);
                    }
                }
            }
        }
        let sw = TWO_PI * self.grid.radius / self.scale;
        let s = surface(
            &self.coeffs,
            self.h2,
            Jet::var(alpha[n], 0),
            Jet::var(beta[n], 1),
        );
        e.add(sw * s.v);
        grad[2 * n] += sw * s.g[0];
        grad[2 * n + 1] += sw * s.g[1];
        if let Some(hb) = hess.as_deref_mut() {
            hb.add(2 * n, 2 * n, sw * s.h[0][0]);
            hb.add(2 * n + 1, 2 * n, sw * s.h[1][0]);
            hb.add(2 * n + 1, 2 * n + 1, sw * s.h[1][1]);
        }
        if self.coeffs.lambda_sg != 0.0 {
            // Local variables (a_M, b_M, a', b') over nodes (a_M-1, b_M-1, a_M, b_M).
            let jac = [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [-1.0 / h, 0.0, 1.0 / h, 0.0],
                [0.0, -1.0 / h, 0.0, 1.0 / h],
            ];
            let x = self.wall_inputs(alpha, beta);
            let [a, b, ap, bp] = [0, 1, 2, 3].map(|i| Jet::var(x[i], i));
            let f = surface_gradient(&self.coeffs, a, b, ap, bp, 1.0 / self.grid.radius);
            e.add(sw * f.v);
            let base = 2 * (n - 1);
            for k in 0..4 {
                let gk: f64 = (0..4).map(|l| f.g[l] * jac[l][k]).sum();
                grad[base + k] += sw * gk;
            }
            if let Some(hb) = hess {
                for k in 0..4 {
                    for kk in 0..=k {
                        let mut acc = 0.0;
                        for l in 0..4 {
                            for ll in 0..4 {
                                acc += jac[l][k] * f.h[l][ll] * jac[ll][kk];
                            }
                        }
                        hb.add(base + k, base + kk, sw * acc);
                    }
                }
            }
        }
        (e.sum(), grad)
    }
}

/// Symmetric band matrix with half-bandwidth 3, lower part stored by row.
#[derive(Debug, Clone, Default)]
pub(crate) struct Band {
    pub rows: Vec<[f64; 4]>,
}

impl Band {
    pub fn reset(&mut self, n: usize) {
        self.rows.clear();
        self.rows.resize(n, [0.0; 4]);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Adds `x` at (i, j) with j <= i <= j + 3.
    pub fn add(&mut self, i: usize, j: usize, x: f64) {
        self.rows[i][i - j] += x;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > 3 {
            0.0
        } else {
            self.rows[i][i - j]
        }
    }

    /// In-place Cholesky of `self + diag(shift)`; `None` unless positive definite.
    pub fn cholesky(&self, shift: &[f64]) -> Option<Band> {
        let n = self.len();
        let mut l = Band {
            rows: vec![[0.0; 4]; n],
        };
        for i in 0..n {
            let lo = i.saturating_sub(3);
            for j in lo..=i {
                let mut s = self.rows[i][i - j] + if i == j { shift[i] } else { 0.0 };
                for k in lo.max(j.saturating_sub(3))..j {
                    s -= l.rows[i][i - k] * l.rows[j][j - k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l.rows[i][0] = s.sqrt();
                } else {
                    l.rows[i][i - j] = s / l.rows[j][0];
                }
            }
        }
        Some(l)
    }

    /// Solves `L L^T x = b` for a factor produced by [`Band::cholesky`].
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(3)..i {
                s -= self.rows[i][i - k] * b[k];
            }
            b[i] = s / self.rows[i][0];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + 4).min(n) {
                s -= self.rows[k][k - i] * b[k];
            }
            b[i] = s / self.rows[i][0];
        }
    }
}

/// Compensated summation; energies are differences of nearly equal sums near convergence.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    s: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn sum(&self) -> f64 {
        self.s + self.c
    }
}

pub fn total_energy(
    tex: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
) -> Result<EnergyBreakdown> {
    let model = Model::new(tex.grid, mat, flow, field)?;
    Ok(model.breakdown(&tex.alpha, &tex.beta))
}

/// `dF/d alpha_i` followed by `dF/d beta_i`, J/m per radian. The pinned angles beta_0 and beta_M get 0.
pub fn energy_gradient(
    tex: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
) -> Result<Vec<f64>> {
    let model = Model::new(tex.grid, mat, flow, field)?;
    let (_, g) = model.derivatives(&tex.alpha, &tex.beta, None);
    let n = tex.grid.len();
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = g[2 * i] * model.scale;
        out[n + i] = g[2 * i + 1] * model.scale;
    }
    out[n] = 0.0;
    Ok(out)
}
