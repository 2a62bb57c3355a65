use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use texlab_core::features::extract;
use texlab_core::fitting::{
    default_lambda_grid, fit_spectrum, ingest_measured, lambda_uncertainty, sensitivity_map,
    FitConfig, FitResult, FixedContext, Param, Params, Strategy, SweepCorrection,
};
use texlab_core::material::{
    lambda_hv, leggett_frequency, matsubara_z, susceptibility_ratio, yosida, GapKind, GapModel,
    MaterialState,
};
use texlab_core::nmr::{normalize, Axis, Spectrum};
use texlab_core::scan::{
    omega_hysteresis, scan_omega_c1, scan_omega_c2, scan_temperature_c2, PathPoint,
};
use texlab_core::setup::Setup;
use texlab_core::texture::{params_hash, potential_well, Texture};

use crate::config::{sha256_hex, RunConfig, ScanKind, StrategyKind};
use crate::error::CliError;
use crate::svg::{Chart, Series};

/// Output directory, written files and the manifest that lists them.
pub struct Run<'a> {
    pub command: &'static str,
    pub cfg: &'a RunConfig,
    pub out: PathBuf,
    outputs: Vec<(String, String)>,
    notes: serde_json::Map<String, Value>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'static str, cfg: &'a RunConfig, out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
        Ok(Run { command, cfg, out: out.to_path_buf(), outputs: Vec::new(), notes: Default::default() })
    }

    fn core<T>(&self, r: texlab_core::Result<T>) -> Result<T, CliError> {
        r.map_err(|e| CliError::from_core(self.command, e))
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, content)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push((name.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    fn plot(&mut self, name: &str, chart: Chart) -> Result<(), CliError> {
        if self.cfg.output.plots {
            self.write(name, &chart.render())?;
        }
        Ok(())
    }

    fn note(&mut self, key: &str, value: Value) {
        self.notes.insert(key.to_string(), value);
    }

    fn cache_dir(&self) -> PathBuf {
        self.cfg.output.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    /// Writes `manifest.json`. The creation time is the only non-reproducible field.
    pub fn finish(self) -> Result<(), CliError> {
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let outputs: Vec<Value> =
            self.outputs.iter().map(|(f, h)| json!({ "file": f, "sha256": h })).collect();
        let manifest = json!({
            "tool": "texlab",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.cfg.to_json(),
            "content_hash": self.cfg.content_hash(),
            "outputs": outputs,
            "notes": Value::Object(self.notes),
            "created_unix": created,
        });
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }
}

fn material(run: &Run, setup: &Setup) -> Result<MaterialState, CliError> {
    run.core(setup.material(run.cfg.material.t, run.cfg.material.lambda_hv))
}

/// Texture for the configured state, from the cache when its physics hash matches.
fn texture(run: &mut Run, setup: &Setup, mat: &MaterialState) -> Result<Texture, CliError> {
    let cfg = run.cfg;
    let flow = run.core(setup.flow(cfg.flow.omega, cfg.flow.omega_v))?;
    let grid = run.core(setup.grid())?;
    let key = format!(
        "{}-{}",
        params_hash(mat, &flow, setup.field(), grid, &setup.solver),
        cfg.solver.branch
    );
    run.note("texture_key", json!(key));
    let file = run.cache_dir().join(format!("{key}.txt"));
    if cfg.output.cache && file.exists() {
        if let Ok(tex) = Texture::read(&file) {
            run.note("cache", json!("hit"));
            return Ok(tex);
        }
    }
    let tex = run.core(setup.solve(cfg.solver.branch, mat, &flow))?;
    if cfg.output.cache {
        let dir = run.cache_dir();
        std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(&file, tex.to_text()))
            .map_err(|e| CliError::Config(format!("cannot write cache {}: {e}", dir.display())))?;
        run.note("cache", json!("miss"));
    } else {
        run.note("cache", json!("off"));
    }
    Ok(tex)
}

fn texture_plots(run: &mut Run, tex: &Texture) -> Result<(), CliError> {
    let r_mm: Vec<f64> = tex.grid.points().iter().map(|r| r * 1e3).collect();
    let beta: Vec<(f64, f64)> = r_mm.iter().zip(&tex.beta).map(|(r, b)| (*r, b.to_degrees())).collect();
    run.plot(
        "beta.svg",
        Chart {
            title: format!("beta(r), {} texture", tex.branch),
            x_label: "r (mm)".into(),
            y_label: "beta (deg)".into(),
            series: vec![Series::line("beta", beta)],
            guides: vec![],
        },
    )?;
    let well = run.core(potential_well(tex))?;
    let u: Vec<(f64, f64)> = well.r.iter().zip(&well.u).map(|(r, u)| (r * 1e3, *u)).collect();
    run.plot(
        "well.svg",
        Chart {
            title: "U(r) = sin^2 beta".into(),
            x_label: "r (mm)".into(),
            y_label: "U".into(),
            series: vec![Series::line("U", u)],
            guides: well.well.map(|(a, b)| vec![a * 1e3, b * 1e3]).unwrap_or_default(),
        },
    )
}

pub fn cmd_params(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let p = &cfg.params;
    if !(p.t_min > 0.0 && p.t_max <= 1.0 && p.t_min <= p.t_max && p.t_step > 0.0) {
        return Err(CliError::Config(format!(
            "[params] needs 0 < t_min <= t_max <= 1 and t_step > 0, got {} {} {}",
            p.t_min, p.t_max, p.t_step
        )));
    }
    let setup = cfg.setup()?;
    let table = &setup.table;
    let fl = run.core(table.fermi_liquid(setup.pressure))?;
    let tc = run.core(table.tc(setup.pressure))?;
    let correction = table.gap.correction.clone();
    let models = [GapKind::WeakCoupling, GapKind::StrongCoupling, GapKind::Scaled]
        .map(|k| GapModel::from_kind(k, correction.clone()));
    let chosen = GapModel::from_kind(setup.gap, correction.clone());

    let n = ((p.t_max - p.t_min) / p.t_step + 1e-9).floor() as usize;
    let mut csv = String::from(
        "T,gap_weak_coupling,gap_strong_coupling,gap_scaled,Y,Z3,Z5,Z7,lambda_HV,chi_B_over_chi_N,Omega_B_Hz\n",
    );
    let mut lam_curves: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 3];
    for k in 0..=n {
        let t = (p.t_min + k as f64 * p.t_step).min(p.t_max);
        let gaps: Vec<f64> = models.iter().map(|m| run.core(m.gap(t))).collect::<Result<_, _>>()?;
        let gap = run.core(chosen.gap(t))?;
        let y = run.core(yosida(t, gap))?;
        let z: Vec<f64> = [3, 5, 7].iter().map(|&j| run.core(matsubara_z(j, t, gap))).collect::<Result<_, _>>()?;
        let lam = |g: f64| -> Result<f64, CliError> {
            if t < 1.0 && g > 0.0 {
                run.core(lambda_hv(t, &fl, g, tc))
            } else {
                Ok(0.0)
            }
        };
        for (curve, g) in lam_curves.iter_mut().zip(&gaps) {
            curve.push((t, lam(*g)?));
        }
        let chi = run.core(susceptibility_ratio(t, gap, fl.f0a))?;
        // The fit formula turns negative near Tc; the cell stays empty there.
        let ob = match leggett_frequency(t, &table.leggett) {
            Ok(v) if v == 0.0 => "0".into(),
            Ok(v) => v.to_string(),
            Err(texlab_core::Error::NegativeRadicand { .. }) => String::new(),
            Err(e) => return Err(CliError::from_core(run.command, e)),
        };
        csv.push_str(&format!(
            "{t},{},{},{},{y},{},{},{},{},{chi},{ob}\n",
            gaps[0],
            gaps[1],
            gaps[2],
            z[0],
            z[1],
            z[2],
            lam(gap)?
        ));
    }
    run.write("params.csv", &csv)?;
    let [weak, strong, scaled] = lam_curves.try_into().expect("three models");
    run.plot(
        "lambda_hv.svg",
        Chart {
            title: format!("lambda_HV at {} bar", setup.pressure),
            x_label: "T/Tc".into(),
            y_label: "lambda_HV (kg m^-3 T^-2)".into(),
            series: vec![
                Series::line("weak coupling", weak),
                Series::line("strong coupling", strong),
                Series::line("scaled", scaled),
            ],
            guides: vec![],
        },
    )
}

pub fn cmd_texture(run: &mut Run) -> Result<(), CliError> {
    let setup = run.cfg.setup()?;
    let mat = material(run, &setup)?;
    let tex = texture(run, &setup, &mat)?;
    run.note("branch", json!(tex.branch.to_string()));
    run.note("energy", json!(tex.energy));
    run.write("texture.txt", &tex.to_text())?;
    texture_plots(run, &tex)
}

fn spectrum_chart(title: &str, series: Vec<Series>, axis: Axis) -> Chart {
    let (x_label, y_label) = match axis {
        Axis::ReducedShift => ("reduced shift", "absorption"),
        Axis::FrequencyShift => ("frequency shift (kHz)", "absorption (1/kHz)"),
        Axis::Field => ("field (T)", "absorption"),
    };
    Chart { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series, guides: vec![] }
}

fn points(spec: &Spectrum) -> Vec<(f64, f64)> {
    let scale = if spec.axis == Axis::FrequencyShift { 1e-3 } else { 1.0 };
    let yscale = if spec.axis == Axis::FrequencyShift { 1e3 } else { 1.0 };
    spec.x.iter().zip(&spec.y).map(|(x, y)| (x * scale, y * yscale)).collect()
}

pub fn cmd_spectrum(run: &mut Run) -> Result<(), CliError> {
    let setup = run.cfg.setup()?;
    let mat = material(run, &setup)?;
    let tex = texture(run, &setup, &mat)?;
    let spec = run.core(setup.spectrum(&tex, &mat, run.cfg.spectrum.dh_over_h))?;
    let features = run.core(extract(&spec))?;
    run.write("spectrum.csv", &spec.to_csv())?;
    run.write("features.json", &serde_json::to_string_pretty(&features).expect("features serialize"))?;
    let title = format!("{} texture, T = {}, Omega = {} rad/s", tex.branch, run.cfg.material.t, run.cfg.flow.omega);
    run.plot("spectrum.svg", spectrum_chart(&title, vec![Series::line("calculated", points(&spec))], spec.axis))?;
    texture_plots(run, &tex)
}

/// Spectrum file in any axis; field sweeps go through lag and baseline correction.
fn read_measured(run: &Run, path: &Path) -> Result<Spectrum, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec = run.core(Spectrum::from_csv(&text))?;
    if spec.axis == Axis::Field {
        let fit = &run.cfg.fit;
        let windows: Vec<(f64, f64)> = fit.baseline.iter().map(|w| (w[0], w[1])).collect();
        return run.core(ingest_measured(path, SweepCorrection { lag: fit.lag }, &windows, None));
    }
    run.core(normalize(&spec))
}

pub fn cmd_fit(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let f = &cfg.fit;
    let path = f
        .measured
        .clone()
        .ok_or_else(|| CliError::Config("[fit] needs `measured`".into()))?;
    let measured = read_measured(run, &path)?;
    let setup = cfg.setup()?;
    let ctx = FixedContext { setup, omega: cfg.flow.omega, omega_v: cfg.flow.omega_v, branch: cfg.solver.branch };
    let strategy = match f.strategy {
        StrategyKind::SingleSpectrum => Strategy::SingleSpectrum,
        StrategyKind::DualTexturePair => {
            let p = f
                .partner
                .clone()
                .ok_or_else(|| CliError::Config("dual_texture_pair needs [fit] `partner`".into()))?;
            Strategy::DualTexturePair {
                partner: read_measured(run, &p)?,
                omega: f.partner_omega,
                omega_v: f.partner_omega_v,
                branch: f.partner_branch,
            }
        }
        StrategyKind::OmegaC1Anchor => Strategy::OmegaC1Anchor { omega_c1: f.omega_c1, omega_v: f.anchor_omega_v },
    };
    let fc = FitConfig {
        strategy,
        tolerance: f.tolerance,
        max_iter: f.max_iter,
        ..FitConfig::new(f.free.clone(), f.initial, f.lower, f.upper)
    };
    let mut result: FitResult = run.core(fit_spectrum(&measured, &ctx, &fc))?;

    if f.uncertainty_steps > 0 && f.free.contains(&Param::LambdaHv) {
        let lambdas = default_lambda_grid(result.lambda_hv, f.uncertainty_steps);
        let map = run.core(sensitivity_map(&result.params(), &ctx, &lambdas))?;
        let mut csv = String::from("lambda_HV,cf_height_per_kHz\n");
        for (l, h) in &map.points {
            csv.push_str(&format!("{l},{h}\n"));
        }
        run.write("sensitivity.csv", &csv)?;
        // The interval is optional: a map that cannot be inverted leaves it at zero width.
        match lambda_uncertainty(&result, &map) {
            Ok(iv) => result.lambda_interval = iv,
            Err(e @ texlab_core::Error::NonMonotoneMap { .. }) => {
                eprintln!("texlab: warning: no lambda_HV interval: {e}");
                run.note("lambda_interval_error", json!(e.to_string()));
            }
            Err(e) => return Err(CliError::from_core(run.command, e)),
        }
    }
    run.note("criteria_all", json!(result.criteria.all()));
    run.write("fit.json", &serde_json::to_string_pretty(&result).expect("fit result serializes"))?;
    run.write("calculated.csv", &result.calculated.to_csv())?;

    let m = run.core(measured.to_frequency_shift())?;
    let c = run.core(result.calculated.to_frequency_shift())?;
    let Params { t, lambda_hv, dh_over_h } = result.params();
    let title = format!("fit: T = {t:.4}, lambda_HV = {lambda_hv:.3}, dH/H = {dh_over_h:.2e}");
    run.plot(
        "fit.svg",
        spectrum_chart(&title, vec![Series::line("measured", points(&m)), Series::line("calculated", points(&c))], m.axis),
    )
}

fn path_csv(sweeps: &[(&str, &[PathPoint])]) -> String {
    let mut out = String::from("sweep,control,branch,energy,start_energy,cf_height\n");
    for (name, path) in sweeps {
        for p in *path {
            let cf = p.cf_height.map(|h| h.to_string()).unwrap_or_default();
            out.push_str(&format!("{name},{},{},{},{},{cf}\n", p.control, p.branch, p.energy, p.start_energy));
        }
    }
    out
}

fn scan_chart(title: String, x_label: &str, sweeps: &[(&str, &[PathPoint])], guides: Vec<f64>) -> Chart {
    let series = sweeps
        .iter()
        .map(|(name, path)| {
            let mut pts: Vec<(f64, f64)> = path.iter().map(|p| (p.control, p.cf_height.unwrap_or(0.0))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series::markers(name, pts)
        })
        .collect();
    Chart { title, x_label: x_label.into(), y_label: "cf-peak height".into(), series, guides }
}

pub fn cmd_scan(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let s = &cfg.scan;
    let setup = cfg.setup()?;
    let opts = s.options(cfg.spectrum.dh_over_h);
    let (t, omega, omega_v, lam) = (cfg.material.t, cfg.flow.omega, cfg.flow.omega_v, cfg.material.lambda_hv);
    let range = (s.from, s.to);
    match s.kind {
        ScanKind::OmegaC1 => {
            if !(s.to > s.from && opts.step > 0.0) {
                return Err(CliError::Config("omega_c1 scan needs from < to and step > 0".into()));
            }
            let n = ((s.to - s.from) / opts.step + 1e-9).floor() as usize;
            let grid: Vec<f64> = (0..=n).map(|k| s.from + k as f64 * opts.step).collect();
            let r = run.core(scan_omega_c1(&setup, t, omega_v, lam, &grid, &opts))?;
            run.note("omega_c1", json!(r.omega_c1));
            run.write("c1.json", &serde_json::to_string_pretty(&r).expect("result serializes"))?;
            let sweeps = [("c1", r.path.as_slice())];
            run.write("path.csv", &path_csv(&sweeps))?;
            run.plot("scan.svg", scan_chart(format!("Omega_c1 = {:.4} rad/s", r.omega_c1), "Omega (rad/s)", &sweeps, vec![r.omega_c1]))
        }
        ScanKind::OmegaC2 | ScanKind::TemperatureC2 => {
            let (r, x_label) = if s.kind == ScanKind::OmegaC2 {
                (run.core(scan_omega_c2(&setup, t, omega_v, lam, range, s.direction, &opts))?, "Omega (rad/s)")
            } else {
                (run.core(scan_temperature_c2(&setup, omega, omega_v, lam, range, s.direction, &opts))?, "T/Tc")
            };
            run.note("transition", json!(r.bracket.mid()));
            run.write("c2.json", &serde_json::to_string_pretty(&r).expect("result serializes"))?;
            let name = format!("{:?}", s.direction).to_lowercase();
            let sweeps = [(name.as_str(), r.path.as_slice())];
            run.write("path.csv", &path_csv(&sweeps))?;
            let guides = vec![r.bracket.before, r.bracket.after];
            run.plot("scan.svg", scan_chart(format!("transition at {:.4}", r.bracket.mid()), x_label, &sweeps, guides))
        }
        ScanKind::OmegaHysteresis => {
            let r = run.core(omega_hysteresis(&setup, t, omega_v, lam, range, &opts))?;
            run.note("hysteresis_width", json!(r.hysteresis_width));
            run.write("report.json", &r.to_json())?;
            run.write("path.csv", &r.path_csv())?;
            let sweeps = [("up", r.up.path.as_slice()), ("down", r.down.path.as_slice())];
            let title = format!("up {:.3}, down {:.3} rad/s", r.c2_up, r.c2_down);
            run.plot("scan.svg", scan_chart(title, "Omega (rad/s)", &sweeps, vec![r.c2_down, r.c2_up]))
        }
    }
}
