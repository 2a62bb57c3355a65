use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use texlab_core::fitting::FitResult;
use texlab_core::nmr::Spectrum;
use texlab_core::scan::TransitionReport;
use texlab_core::texture::Texture;

const PARTED: &str = "[material]\nT = 0.31\nlambda_HV = 3.1\n[flow]\nomega = 0.9\nomega_v = 0.1\n[solver]\nbranch = \"parted\"\n";

fn texlab(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_texlab")).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn ok(args: &[&str], dir: &Path) {
    let (code, err) = texlab(args, dir);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn params_table_limits() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "p.toml", "[params]\nt_min = 0.05\nt_max = 1.0\nt_step = 0.05\n");
    ok(&["params", "--config", "p.toml", "--out", "scaled"], d.path());
    ok(&["params", "--config", "p.toml", "--out", "sc", "material.gap=strong_coupling"], d.path());
    let rows = csv_rows(&d.path().join("scaled/params.csv"));
    let chi: f64 = rows[0][9].parse().unwrap();
    assert!((chi - 0.33).abs() < 0.005, "{chi}");
    let last = rows.last().unwrap();
    assert_eq!(last[0], "1");
    assert!(last[1..4].iter().all(|g| g.parse::<f64>().unwrap() == 0.0));

    let sc = csv_rows(&d.path().join("sc/params.csv"));
    let split = |k: usize| {
        let (a, b): (f64, f64) = (rows[k][8].parse().unwrap(), sc[k][8].parse().unwrap());
        (a - b).abs() / a.max(b)
    };
    // Rows 5 and 17 are T = 0.3 and T = 0.9.
    assert!(split(5) > 0.05 && split(5) > 3.0 * split(17), "{} {}", split(5), split(17));
    assert!(d.path().join("scaled/lambda_hv.svg").exists());
}

#[test]
fn simple_spectrum_has_no_cf_peak() {
    let d = tempfile::tempdir().unwrap();
    config(
        d.path(),
        "s.toml",
        "[material]\nT = 0.25\nlambda_HV = 1.4\n[flow]\nomega = 0.2\nomega_v = 0.0\n[solver]\nbranch = \"simple\"\n",
    );
    ok(&["spectrum", "--config", "s.toml", "--out", "o"], d.path());
    let f: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("o/features.json")).unwrap()).unwrap();
    assert!(f["cf_peak"].is_null());
    for plot in ["spectrum.svg", "beta.svg", "well.svg"] {
        assert!(std::fs::read_to_string(d.path().join("o").join(plot)).unwrap().starts_with("<svg"));
    }
}

#[test]
fn cache_hit_reproduces_the_texture() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "t.toml", PARTED);
    ok(&["texture", "--config", "t.toml", "--out", "o"], d.path());
    let first = manifest(&d.path().join("o"));
    let text = std::fs::read(d.path().join("o/texture.txt")).unwrap();
    ok(&["texture", "--config", "t.toml", "--out", "o"], d.path());
    let second = manifest(&d.path().join("o"));
    assert_eq!(first["notes"]["cache"], "miss");
    assert_eq!(second["notes"]["cache"], "hit");
    assert_eq!(first["outputs"], second["outputs"]);
    assert_eq!(text, std::fs::read(d.path().join("o/texture.txt")).unwrap());

    // A physics change misses, a cosmetic one does not.
    ok(&["texture", "--config", "t.toml", "--out", "o", "output.plots=false"], d.path());
    assert_eq!(manifest(&d.path().join("o"))["notes"]["cache"], "hit");
    ok(&["texture", "--config", "t.toml", "--out", "o", "flow.omega=1.0"], d.path());
    assert_eq!(manifest(&d.path().join("o"))["notes"]["cache"], "miss");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "t.toml", PARTED);
    ok(&["spectrum", "--config", "t.toml", "--out", "a", "output.cache=false"], d.path());
    ok(&["spectrum", "--config", "t.toml", "--out", "b", "output.cache=false"], d.path());
    let (mut a, mut b) = (manifest(&d.path().join("a")), manifest(&d.path().join("b")));
    for m in [&mut a, &mut b] {
        m.as_object_mut().unwrap().remove("created_unix");
    }
    assert_eq!(a, b);
    for entry in a["outputs"].as_array().unwrap() {
        let f = entry["file"].as_str().unwrap();
        assert_eq!(std::fs::read(d.path().join("a").join(f)).unwrap(), std::fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(a["content_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn outputs_round_trip_through_their_readers() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "t.toml", PARTED);
    ok(&["spectrum", "--config", "t.toml", "--out", "o"], d.path());
    ok(&["texture", "--config", "t.toml", "--out", "o"], d.path());
    let text = std::fs::read_to_string(d.path().join("o/texture.txt")).unwrap();
    assert_eq!(Texture::from_text(&text).unwrap().to_text(), text);
    let csv = std::fs::read_to_string(d.path().join("o/spectrum.csv")).unwrap();
    assert_eq!(Spectrum::from_csv(&csv).unwrap().to_csv(), csv);
}

#[test]
fn fit_round_trip_meets_all_criteria() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "t.toml", PARTED);
    ok(&["spectrum", "--config", "t.toml", "--out", "truth"], d.path());
    config(
        d.path(),
        "f.toml",
        "[material]\nT = 0.31\n[flow]\nomega = 0.9\nomega_v = 0.1\n[fit]\nmeasured = \"truth/spectrum.csv\"\nuncertainty_steps = 0\n",
    );
    ok(&["fit", "--config", "f.toml", "--out", "fit"], d.path());
    let json = std::fs::read_to_string(d.path().join("fit/fit.json")).unwrap();
    let r: FitResult = serde_json::from_str(&json).unwrap();
    assert!(r.criteria.all(), "{:?}", r.criteria);
    assert!((r.t - 0.31).abs() < 0.0031 && (r.lambda_hv - 3.1).abs() < 0.062);
    assert_eq!(serde_json::to_string_pretty(&r).unwrap(), json);
    assert!(d.path().join("fit/fit.svg").exists());
}

#[test]
fn hysteresis_scan_report() {
    let d = tempfile::tempdir().unwrap();
    config(
        d.path(),
        "h.toml",
        "[material]\nT = 0.25\n[flow]\nomega_v = 0.1\n[scan]\nkind = \"omega_hysteresis\"\nfrom = 0.1\nto = 3.0\ntolerance = 0.01\n",
    );
    ok(&["scan", "--config", "h.toml", "--out", "o"], d.path());
    let r: TransitionReport = serde_json::from_str(&std::fs::read_to_string(d.path().join("o/report.json")).unwrap()).unwrap();
    assert!(r.c2_down <= r.c2_up && r.hysteresis_width >= 0.3);
    assert!(std::fs::read_to_string(d.path().join("o/path.csv")).unwrap().starts_with("sweep,control"));
    assert!(d.path().join("o/scan.svg").exists());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    config(d.path(), "t.toml", PARTED);
    config(d.path(), "typo.toml", "[flow]\nomega = 0.9\nomgea = 1.0\n");
    let (code, err) = texlab(&["texture", "--config", "typo.toml"], d.path());
    assert_eq!(code, 2);
    assert!(err.contains("line 3") && err.contains("omgea"), "{err}");
    assert_eq!(texlab(&["texture", "--config", "t.toml", "solver.branch=twisted"], d.path()).0, 2);
    assert_eq!(texlab(&["texture", "--config", "missing.toml"], d.path()).0, 2);
    assert_eq!(texlab(&["fit", "--config", "t.toml"], d.path()).0, 2);
    let (code, err) = texlab(&["texture", "--config", "t.toml", "solver.max_iter=3", "output.cache=false"], d.path());
    assert_eq!(code, 3);
    assert!(err.contains("texture:"), "{err}");
    let scan = ["scan", "--config", "t.toml", "scan.kind=omega_c2", "scan.from=0.2", "scan.to=0.6", "material.T=0.25"];
    assert_eq!(texlab(&scan, d.path()).0, 4);
}
