//! Axisymmetric flare-out textures: discretization, free energy and minimization.

pub mod energy;
pub mod geometry;
pub(crate) mod jet;
pub mod solver;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use energy::{energy_density, energy_gradient, total_energy, DensityTerms, EnergyBreakdown};
pub use geometry::{leggett_angle, nhat_field, rotation_matrix};
pub use solver::{initial_guess, minimize, minimize_traced, params_hash, SolverOptions};

/// Default radial step, m.
pub const DEFAULT_STEP: f64 = 15e-6;

/// Wall angle preferred by the field-velocity and surface terms, sin^2(beta) = 0.8.
pub fn wall_angle() -> f64 {
    0.8f64.sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub radius: f64,
    pub cells: usize,
}

impl RadialGrid {
    /// Uniform grid with the step closest to `step` that divides `radius` exactly.
    pub fn new(radius: f64, step: f64) -> Result<Self> {
        if !(radius > 0.0 && step > 0.0 && step <= radius) {
            return Err(Error::Domain(format!("bad grid: R={radius}, h={step}")));
        }
        let cells = (radius / step).round().max(1.0) as usize;
        Ok(RadialGrid { radius, cells })
    }

    pub fn step(&self) -> f64 {
        self.radius / self.cells as f64
    }

    pub fn len(&self) -> usize {
        self.cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn r(&self, i: usize) -> f64 {
        if i == self.cells {
            self.radius
        } else {
            self.radius * i as f64 / self.cells as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.r(i)).collect()
    }

    /// Same radius, half the step.
    pub fn refined(&self) -> Self {
        RadialGrid {
            radius: self.radius,
            cells: 2 * self.cells,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Simple,
    Parted,
    Extended,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Simple => "simple",
            Branch::Parted => "parted",
            Branch::Extended => "extended",
        })
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Branch::Simple),
            "parted" => Ok(Branch::Parted),
            "extended" => Ok(Branch::Extended),
            other => Err(Error::Domain(format!("unknown branch `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub grid: RadialGrid,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Branch the texture was started on (the guess), or its classified shape once converged.
    pub branch: Branch,
    /// Total free energy per unit cell length, J/m.
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the scaled gradient at the last iterate.
    pub grad_norm: f64,
    /// Whether the Hessian at the last iterate is positive definite.
    pub stable: bool,
    pub params_hash: String,
}

impl Texture {
    pub fn from_angles(
        grid: RadialGrid,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        branch: Branch,
    ) -> Result<Self> {
        if alpha.len() != grid.len() || beta.len() != grid.len() {
            return Err(Error::Domain(format!(
                "texture needs {} points, got alpha {} / beta {}",
                grid.len(),
                alpha.len(),
                beta.len()
            )));
        }
        Ok(Texture {
            grid,
            alpha,
            beta,
            branch,
            energy: f64::NAN,
            converged: false,
            iterations: 0,
            grad_norm: f64::NAN,
            stable: false,
            params_hash: String::new(),
        })
    }

    pub fn wall_beta(&self) -> f64 {
        self.beta[self.grid.cells]
    }

    /// Radius of the first 90 degree crossing of beta, by linear interpolation.
    pub fn ninety_crossing(&self) -> Option<f64> {
        let half = std::f64::consts::FRAC_PI_2;
        let h = self.grid.step();
        self.beta.windows(2).enumerate().find_map(|(i, w)| {
            if w[0] < half && w[1] >= half {
                Some(h * (i as f64 + (half - w[0]) / (w[1] - w[0])))
            } else {
                None
            }
        })
    }

    /// Longest run of cells over which beta stays flat, as a fraction of R.
    ///
    /// A cell is flat when `R |d beta/dr| < PLATEAU_SLOPE` and beta is well away from the axis.
    pub fn plateau_fraction(&self) -> f64 {
        let h = self.grid.step();
        let r = self.grid.radius;
        let mut best = 0usize;
        let mut run = 0usize;
        for w in self.beta.windows(2) {
            let slope = (w[1] - w[0]).abs() / h * r;
            let mid = 0.5 * (w[0] + w[1]);
            if slope < PLATEAU_SLOPE && mid > PLATEAU_MIN_BETA {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best as f64 / self.grid.cells as f64
    }

    /// Shape classification: a 90 degree crossing means extended, a plateau means parted.
    pub fn classify(&self) -> Branch {
        if self.ninety_crossing().is_some() {
            Branch::Extended
        } else if self.plateau_fraction() >= PLATEAU_MIN_FRACTION {
            Branch::Parted
        } else {
            Branch::Simple
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# texlab texture\n");
        let _ = writeln!(s, "# branch={}", self.branch);
        let _ = writeln!(s, "# energy={:?}", self.energy);
        let _ = writeln!(s, "# params_hash={}", self.params_hash);
        let _ = writeln!(s, "# converged={}", self.converged);
        let _ = writeln!(s, "# iterations={}", self.iterations);
        let _ = writeln!(s, "# grad_norm={:?}", self.grad_norm);
        let _ = writeln!(s, "# stable={}", self.stable);
        let _ = writeln!(s, "# radius={:?}", self.grid.radius);
        let _ = writeln!(s, "# cells={}", self.grid.cells);
        s.push_str("r_m,alpha_rad,beta_rad\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?}",
                self.grid.r(i),
                self.alpha[i],
                self.beta[i]
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.starts_with("r_m") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!(
                    "texture line {}: expected 3 columns",
                    n + 1
                )));
            }
            alpha.push(parse_f64(cols[1], n)?);
            beta.push(parse_f64(cols[2], n)?);
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("texture header lacks `{k}`")))
        };
        let radius = parse_f64(&get("radius")?, 0)?;
        let cells: usize = get("cells")?
            .parse()
            .map_err(|_| Error::Format("bad `cells` in texture header".into()))?;
        let grid = RadialGrid { radius, cells };
        let mut tex = Texture::from_angles(grid, alpha, beta, get("branch")?.parse()?)?;
        tex.energy = parse_f64(&get("energy")?, 0)?;
        tex.params_hash = get("params_hash")?;
        tex.converged = get("converged")? == "true";
        tex.iterations = get("iterations")?
            .parse()
            .map_err(|_| Error::Format("bad iterations".into()))?;
        tex.grad_norm = parse_f64(&get("grad_norm")?, 0)?;
        tex.stable = get("stable")? == "true";
        Ok(tex)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

const PLATEAU_SLOPE: f64 = 0.25;
const PLATEAU_MIN_BETA: f64 = 0.5;
const PLATEAU_MIN_FRACTION: f64 = 0.1;

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {}: bad number `{s}`", line + 1)))
}

/// Reduced textural potential `U(r) = sin^2 beta(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialWell {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    /// For textures that cross 90 degrees: the well between the crossing and the wall.
    pub well: Option<(f64, f64)>,
}

pub fn potential_well(tex: &Texture) -> Result<PotentialWell> {
    if !tex.converged {
        return Err(Error::Unconverged {
            iterations: tex.iterations,
            grad_norm: tex.grad_norm,
        });
    }
    let u = tex.beta.iter().map(|b| b.sin().powi(2)).collect();
    let well = tex.ninety_crossing().map(|r| (r, tex.grid.radius));
    Ok(PotentialWell {
        r: tex.grid.points(),
        u,
        well,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing() {
        let g = RadialGrid::new(3e-3, DEFAULT_STEP).unwrap();
        assert_eq!(g.cells, 200);
        assert!((g.step() * g.cells as f64 - 3e-3).abs() < 1e-12 * 3e-3);
        assert_eq!(g.r(g.cells), 3e-3);
        assert_eq!(g.refined().cells, 400);
        assert!(RadialGrid::new(3e-3, 0.0).is_err());
    }

    #[test]
    fn wall_angle_value() {
        assert!((wall_angle().to_degrees() - 63.43).abs() < 0.01);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = RadialGrid::new(1e-3, 1e-4).unwrap();
        let alpha: Vec<f64> = (0..g.len())
            .map(|i| 0.1 * (i as f64).sin() + 1.0 / 3.0)
            .collect();
        let beta: Vec<f64> = (0..g.len())
            .map(|i| (i as f64 * 0.1).powf(1.3) / 7.0)
            .collect();
        let mut t = Texture::from_angles(g, alpha, beta, Branch::Parted).unwrap();
        t.energy = -1.234_567_890_123_456_7e-12;
        t.grad_norm = 3.3e-11;
        t.params_hash = "abc123".into();
        t.converged = true;
        let back = Texture::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), t.to_text());
    }

    #[test]
    fn classification_by_shape() {
        let g = RadialGrid::new(3e-3, 3e-5).unwrap();
        let n = g.len();
        let lin =
            |end: f64| -> Vec<f64> { (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect() };
        let simple =
            Texture::from_angles(g, vec![0.0; n], lin(wall_angle()), Branch::Simple).unwrap();
        assert_eq!(simple.classify(), Branch::Simple);
        let ext = Texture::from_angles(
            g,
            vec![0.0; n],
            lin(std::f64::consts::PI - wall_angle()),
            Branch::Simple,
        )
        .unwrap();
        assert_eq!(ext.classify(), Branch::Extended);
        // Rise over the first third, then flat.
        let plateau: Vec<f64> = (0..n)
            .map(|i| (3.0 * i as f64 / (n - 1) as f64).min(1.0) * 1.0)
            .collect();
        let parted = Texture::from_angles(g, vec![0.0; n], plateau, Branch::Simple).unwrap();
        assert_eq!(parted.classify(), Branch::Parted);
    }

    #[test]
    fn well_requires_convergence() {
        let g = RadialGrid::new(1e-3, 1e-4).unwrap();
        let t = Texture::from_angles(g, vec![0.0; g.len()], vec![0.0; g.len()], Branch::Simple)
            .unwrap();
        assert!(potential_well(&t).is_err());
    }
}
