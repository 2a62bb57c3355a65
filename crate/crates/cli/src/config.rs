//! Run configuration: one TOML file with a block per module, plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use texlab_core::fitting::{Param, Params};
use texlab_core::material::{GapKind, MaterialTable};
use texlab_core::scan::{Direction, ScanOptions};
use texlab_core::setup::Setup;
use texlab_core::texture::{Branch, SolverOptions, DEFAULT_STEP};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialCfg {
    #[serde(rename = "T")]
    pub t: f64,
    /// bar
    pub pressure: f64,
    pub gap: GapKind,
    /// Fixes lambda_HV instead of computing it, kg/(m^3 T^2).
    #[serde(rename = "lambda_HV", skip_serializing_if = "Option::is_none")]
    pub lambda_hv: Option<f64>,
    /// Coefficient table replacing the bundled 29 bar one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

impl Default for MaterialCfg {
    fn default() -> Self {
        MaterialCfg { t: 0.31, pressure: 29.0, gap: GapKind::Scaled, lambda_hv: None, table: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowCfg {
    /// rad/s
    pub omega: f64,
    /// Vortex-cluster rotation, rad/s.
    pub omega_v: f64,
    /// Cell radius, m.
    pub radius: f64,
}

impl Default for FlowCfg {
    fn default() -> Self {
        FlowCfg { omega: 0.9, omega_v: 0.1, radius: 3e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverCfg {
    pub branch: Branch,
    /// Radial grid step, m.
    pub step: f64,
    pub gtol: f64,
    pub etol: f64,
    pub max_iter: usize,
    pub max_step: f64,
    pub pin_wall: bool,
}

impl Default for SolverCfg {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverCfg {
            branch: Branch::Parted,
            step: DEFAULT_STEP,
            gtol: o.gtol,
            etol: o.etol,
            max_iter: o.max_iter,
            max_step: o.max_step,
            pin_wall: o.pin_wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumCfg {
    /// Hz
    pub nu_rf: f64,
    #[serde(rename = "dHoverH")]
    pub dh_over_h: f64,
}

impl Default for SpectrumCfg {
    fn default() -> Self {
        SpectrumCfg { nu_rf: 965e3, dh_over_h: 8.8e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsCfg {
    pub t_min: f64,
    pub t_max: f64,
    pub t_step: f64,
}

impl Default for ParamsCfg {
    fn default() -> Self {
        ParamsCfg { t_min: 0.05, t_max: 1.0, t_step: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingleSpectrum,
    DualTexturePair,
    OmegaC1Anchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCfg {
    /// Spectrum file: reduced or frequency axis, or a raw field sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<PathBuf>,
    pub free: Vec<Param>,
    pub initial: Params,
    pub lower: Params,
    pub upper: Params,
    pub strategy: StrategyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partner: Option<PathBuf>,
    pub partner_omega: f64,
    pub partner_omega_v: f64,
    pub partner_branch: Branch,
    /// Measured Omega_c1 for the anchor strategy, rad/s.
    pub omega_c1: f64,
    pub anchor_omega_v: f64,
    pub tolerance: f64,
    pub max_iter: u64,
    /// Field lag of a raw sweep, T.
    pub lag: f64,
    /// Field windows of a raw sweep used for the linear baseline, T.
    pub baseline: Vec<[f64; 2]>,
    /// Points either side of the fitted lambda_HV in the sensitivity map; 0 skips the interval.
    pub uncertainty_steps: usize,
}

impl Default for FitCfg {
    fn default() -> Self {
        FitCfg {
            measured: None,
            free: vec![Param::T, Param::LambdaHv, Param::DhOverH],
            initial: Params { t: 0.33, lambda_hv: 2.7, dh_over_h: 1.1e-3 },
            lower: Params { t: 0.25, lambda_hv: 2.0, dh_over_h: 2e-4 },
            upper: Params { t: 0.40, lambda_hv: 6.0, dh_over_h: 2e-3 },
            strategy: StrategyKind::SingleSpectrum,
            partner: None,
            partner_omega: 1.2,
            partner_omega_v: 0.1,
            partner_branch: Branch::Extended,
            omega_c1: 1.0,
            anchor_omega_v: 0.0,
            tolerance: 1e-4,
            max_iter: 400,
            lag: 0.0,
            baseline: Vec::new(),
            uncertainty_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    OmegaC1,
    OmegaC2,
    TemperatureC2,
    OmegaHysteresis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanCfg {
    pub kind: ScanKind,
    pub from: f64,
    pub to: f64,
    pub direction: Direction,
    /// Continuation step; defaults to 0.05 rad/s or 0.005 T_c by control.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub tolerance: f64,
}

impl Default for ScanCfg {
    fn default() -> Self {
        ScanCfg {
            kind: ScanKind::OmegaHysteresis,
            from: 0.1,
            to: 3.0,
            direction: Direction::Up,
            step: None,
            tolerance: 0.01,
        }
    }
}

impl ScanCfg {
    pub fn options(&self, dh_over_h: f64) -> ScanOptions {
        let base = match self.kind {
            ScanKind::TemperatureC2 => ScanOptions::temperature(),
            _ => ScanOptions::omega(),
        };
        ScanOptions {
            step: self.step.unwrap_or(base.step),
            tolerance: self.tolerance,
            dh_over_h,
            ..base
        }
    }
}

/// Cosmetic and bookkeeping keys; none of them enter the physics hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputCfg {
    pub plots: bool,
    pub cache: bool,
    /// Defaults to `<out>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for scans and fits; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg { plots: true, cache: true, cache_dir: None, workers: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub material: MaterialCfg,
    pub flow: FlowCfg,
    pub solver: SolverCfg,
    pub spectrum: SpectrumCfg,
    pub params: ParamsCfg,
    pub fit: FitCfg,
    pub scan: ScanCfg,
    pub output: OutputCfg,
}

/// Parse `key=value` with a dotted key. The value is read as TOML, falling back to a bare string.
fn parse_override(arg: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{arg}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.len() != 2 || path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` must be section.key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

impl RunConfig {
    /// Load `path` (relative paths inside resolve against its directory) and apply overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_str_with(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.material.table, &mut cfg.fit.measured, &mut cfg.fit.partner, &mut cfg.output.cache_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
        // Parse the file alone first so errors carry its line numbers.
        toml::from_str::<RunConfig>(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            let section = table
                .entry(path[0].clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let section = section
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{}` is not a section", path[0])))?;
            section.insert(path[1].clone(), value);
        }
        RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::Config(format!("after overrides {overrides:?}: {}", e.message())))
    }

    pub fn setup(&self) -> Result<Setup, CliError> {
        let table = match &self.material.table {
            Some(p) => MaterialTable::from_path(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => MaterialTable::default_table(),
        };
        Ok(Setup {
            radius: self.flow.radius,
            pressure: self.material.pressure,
            nu_rf: self.spectrum.nu_rf,
            gap: self.material.gap,
            table,
            step: self.solver.step,
            solver: SolverOptions {
                gtol: self.solver.gtol,
                etol: self.solver.etol,
                max_iter: self.solver.max_iter,
                max_step: self.solver.max_step,
                pin_wall: self.solver.pin_wall,
            },
        })
    }

    /// Resolved config as JSON, the form stored in manifests.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hash of everything except the output block.
    pub fn content_hash(&self) -> String {
        let mut v = self.to_json();
        v.as_object_mut().expect("object").remove("output");
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
