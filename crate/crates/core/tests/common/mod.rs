//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use texlab_core::flow::{counterflow, FlowState};
use texlab_core::material::MaterialState;
use texlab_core::texture::{
    leggett_angle, nhat_field, rotation_matrix, Branch, RadialGrid, Texture,
};

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Smooth random texture with beta_0 = 0.
pub fn random_texture(grid: RadialGrid, rng: &mut Lcg) -> Texture {
    let n = grid.len();
    let (a0, a1, a2) = (rng.next() * 2.0 - 1.0, rng.next() * 3.0, rng.next() * 6.0);
    let (b1, b2, end) = (rng.next() * 0.5, rng.next() * 5.0, 0.6 + 1.6 * rng.next());
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    for i in 0..n {
        let x = i as f64 / (n - 1) as f64;
        alpha.push(a0 + a1 * x + 0.3 * (a2 * x).sin() + 0.05 * (rng.next() - 0.5));
        beta.push(
            end * x
                + b1 * (b2 * x * std::f64::consts::PI).sin() * x
                + 0.02 * x * (rng.next() - 0.5),
        );
    }
    beta[0] = 0.0;
    Texture::from_angles(grid, alpha, beta, Branch::Parted).unwrap()
}

type M3 = [[f64; 3]; 3];

fn r_at(x: f64, y: f64, cell: (f64, f64, f64, f64, f64)) -> M3 {
    // Linear interpolation of the angles inside one cell, extended slightly past its edges.
    let (r0, a0, b0, da, db) = cell;
    let r = (x * x + y * y).sqrt();
    let phi = y.atan2(x);
    let n = nhat_field(a0 + da * (r - r0), b0 + db * (r - r0), phi);
    rotation_matrix(n, leggett_angle()).unwrap()
}

fn derivative(x: f64, y: f64, dir: usize, step: f64, cell: (f64, f64, f64, f64, f64)) -> M3 {
    // Richardson-extrapolated central difference.
    let central = |d: f64| {
        let (p, m) = if dir == 0 {
            (r_at(x + d, y, cell), r_at(x - d, y, cell))
        } else {
            (r_at(x, y + d, cell), r_at(x, y - d, cell))
        };
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (p[i][j] - m[i][j]) / (2.0 * d);
            }
        }
        out
    };
    let (d1, d2) = (central(step), central(0.5 * step));
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (4.0 * d2[i][j] - d1[i][j]) / 3.0;
        }
    }
    out
}

/// Brute-force (r, phi) integral of the free energy built from the full 3D
/// expressions, with the same radial midpoint nodes as the reduced functional.
pub fn energy_2d(
    tex: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
    n_phi: usize,
) -> f64 {
    let c = mat.coeffs;
    let h = tex.grid.step();
    let h2 = field * field;
    let theta = leggett_angle();
    let mut total = 0.0;
    for m in 0..tex.grid.cells {
        let rm = (m as f64 + 0.5) * h;
        let am = 0.5 * (tex.alpha[m] + tex.alpha[m + 1]);
        let bm = 0.5 * (tex.beta[m] + tex.beta[m + 1]);
        let cell = (
            rm,
            am,
            bm,
            (tex.alpha[m + 1] - tex.alpha[m]) / h,
            (tex.beta[m + 1] - tex.beta[m]) / h,
        );
        let v = counterflow(rm, flow).unwrap();
        let mut ring = 0.0;
        for k in 0..n_phi {
            let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.37) / n_phi as f64;
            let (x, y) = (rm * phi.cos(), rm * phi.sin());
            let n = nhat_field(am, bm, phi);
            let rot = rotation_matrix(n, theta).unwrap();
            let dx = derivative(x, y, 0, 1e-3 * rm, cell);
            let dy = derivative(x, y, 1, 1e-3 * rm, cell);
            let d = [dx, dy];
            let mut g1 = 0.0;
            let mut g2 = 0.0;
            for al in 0..3 {
                let div: f64 = (0..2).map(|i| d[i][al][i]).sum();
                g1 += div * div;
                for i in 0..2 {
                    for j in 0..3 {
                        g2 += d[i][al][j] * d[i][al][j];
                    }
                }
            }
            let vel = [-v * phi.sin(), v * phi.cos(), 0.0];
            let n_dot_v: f64 = (0..3).map(|i| n[i] * vel[i]).sum();
            let h_r_v: f64 = (0..3).map(|j| rot[2][j] * vel[j]).sum();
            let e = -c.a * h2 * n[2] * n[2]
                - c.lambda_dv * n_dot_v * n_dot_v
                - c.lambda_hv * h2 * h_r_v * h_r_v
                + c.lambda_g1 * g1
                + c.lambda_g2 * g2;
            ring += e;
        }
        total += ring / n_phi as f64 * 2.0 * std::f64::consts::PI * rm * h;
    }
    // Wall terms with outward-from-liquid normal s = -r. The gradient term uses
    // the wall angles and the slopes of the last cell.
    let nw = tex.grid.cells;
    let rw = tex.grid.radius;
    let wall_cell = (
        rw,
        tex.alpha[nw],
        tex.beta[nw],
        (tex.alpha[nw] - tex.alpha[nw - 1]) / h,
        (tex.beta[nw] - tex.beta[nw - 1]) / h,
    );
    let mut wall = 0.0;
    for k in 0..n_phi {
        let phi = 2.0 * std::f64::consts::PI * (k as f64 + 0.61) / n_phi as f64;
        let n = nhat_field(tex.alpha[nw], tex.beta[nw], phi);
        let rot = rotation_matrix(n, theta).unwrap();
        let s = [-phi.cos(), -phi.sin(), 0.0];
        let hrs: f64 = (0..3).map(|j| rot[2][j] * s[j]).sum();
        wall += -c.d * h2 * hrs * hrs;
        let (x, y) = (rw * phi.cos(), rw * phi.sin());
        let d = [
            derivative(x, y, 0, 1e-3 * rw, wall_cell),
            derivative(x, y, 1, 1e-3 * rw, wall_cell),
        ];
        for al in 0..3 {
            let div: f64 = (0..2).map(|i| d[i][al][i]).sum();
            let sr: f64 = (0..3).map(|i| s[i] * rot[al][i]).sum();
            wall += c.lambda_sg * sr * div;
        }
    }
    total + wall / n_phi as f64 * 2.0 * std::f64::consts::PI * tex.grid.radius
}

/// Central finite-difference gradient of the total energy, same layout as `energy_gradient`.
pub fn fd_gradient(
    tex: &Texture,
    mat: &MaterialState,
    flow: &FlowState,
    field: f64,
    step: f64,
) -> Vec<f64> {
    let n = tex.grid.len();
    let e = |t: &Texture| {
        texlab_core::texture::total_energy(t, mat, flow, field)
            .unwrap()
            .total
    };
    let mut out = vec![0.0; 2 * n];
    for k in 0..2 * n {
        if k == n {
            continue;
        }
        let mut p = tex.clone();
        let mut m = tex.clone();
        if k < n {
            p.alpha[k] += step;
            m.alpha[k] -= step;
        } else {
            p.beta[k - n] += step;
            m.beta[k - n] -= step;
        }
        out[k] = (e(&p) - e(&m)) / (2.0 * step);
    }
    out
}
