use texlab_core::features::{area_mismatch, extract};
use texlab_core::fitting::*;
use texlab_core::material::susceptibility_ratio;
use texlab_core::nmr::{broaden, line_shape, Spectrum, SPECTRUM_BINS, SPECTRUM_RANGE};
use texlab_core::setup::Setup;
use texlab_core::texture::{Branch, RadialGrid, Texture};
use texlab_core::Error;

const TRUTH: Params = Params {
    t: 0.31,
    lambda_hv: 3.1,
    dh_over_h: 8.8e-4,
};
const START: Params = Params {
    t: 0.33,
    lambda_hv: 2.7,
    dh_over_h: 1.1e-3,
};
const LOWER: Params = Params {
    t: 0.25,
    lambda_hv: 2.0,
    dh_over_h: 2e-4,
};
const UPPER: Params = Params {
    t: 0.40,
    lambda_hv: 6.0,
    dh_over_h: 2e-3,
};

fn ctx(omega: f64, omega_v: f64, branch: Branch) -> FixedContext {
    FixedContext {
        setup: Setup::default(),
        omega,
        omega_v,
        branch,
    }
}

fn all_free() -> FitConfig {
    FitConfig::new(
        vec![Param::T, Param::LambdaHv, Param::DhOverH],
        START,
        LOWER,
        UPPER,
    )
}

fn assert_recovered(r: &FitResult, truth: &Params) {
    assert!((r.t - truth.t).abs() / truth.t < 0.01, "T {}", r.t);
    assert!(
        (r.lambda_hv - truth.lambda_hv).abs() / truth.lambda_hv < 0.02,
        "lambda {}",
        r.lambda_hv
    );
    assert!(
        (r.dh_over_h - truth.dh_over_h).abs() / truth.dh_over_h < 0.05,
        "dH/H {}",
        r.dh_over_h
    );
    assert!(r.delta_a < 1e-3, "dA {}", r.delta_a);
}

#[test]
fn forward_model_regimes() {
    let parted = extract(&forward_model(&TRUTH, &ctx(0.9, 0.1, Branch::Parted)).unwrap()).unwrap();
    assert!(parted.cf_peak.is_some() && parted.ninety_peak.is_none());
    let ext = Params {
        t: 0.36,
        lambda_hv: 5.9,
        dh_over_h: 8.8e-4,
    };
    let e = extract(&forward_model(&ext, &ctx(0.7, 0.0, Branch::Extended)).unwrap()).unwrap();
    assert!(e.cf_peak.is_some() && e.ninety_peak.is_some());
    let off = Params {
        lambda_hv: 0.0,
        ..TRUTH
    };
    let none = extract(&forward_model(&off, &ctx(0.9, 0.1, Branch::Parted)).unwrap()).unwrap();
    assert!(none.cf_peak.is_none());
}

#[test]
fn single_spectrum_round_trip() {
    let c = ctx(0.9, 0.1, Branch::Parted);
    let measured = forward_model(&TRUTH, &c).unwrap();
    let r = fit_spectrum(&measured, &c, &all_free()).unwrap();
    assert_recovered(&r, &TRUTH);
    assert!(r.criteria.all(), "{:?}", r.criteria);
    assert!(r.trace.iter().any(|e| e.stage == "T refine"));

    // The reported dA and criteria are recomputable from the final pair.
    let (da, crit) = evaluate(&measured, &r.calculated).unwrap();
    assert_eq!((da, crit), (r.delta_a, r.criteria));
    let direct = area_mismatch(
        &measured.to_frequency_shift().unwrap(),
        &r.calculated.to_frequency_shift().unwrap(),
    )
    .unwrap();
    assert!((direct - da).abs() < 1e-12);
}

#[test]
fn dual_pair_round_trip() {
    let c = ctx(0.9, 0.1, Branch::Parted);
    let partner_ctx = ctx(1.2, 0.1, Branch::Extended);
    let measured = forward_model(&TRUTH, &c).unwrap();
    let partner = forward_model(&TRUTH, &partner_ctx).unwrap();
    assert!(extract(&partner).unwrap().ninety_peak.is_some());
    let mut cfg = all_free();
    cfg.strategy = Strategy::DualTexturePair {
        partner,
        omega: 1.2,
        omega_v: 0.1,
        branch: Branch::Extended,
    };
    let r = fit_spectrum(&measured, &c, &cfg).unwrap();
    assert_recovered(&r, &TRUTH);
    assert!(r.partner_delta_a.unwrap() < 1e-3);
}

#[test]
fn omega_c1_anchor_round_trip() {
    let s = Setup::default();
    let c = ctx(0.9, 0.1, Branch::Parted);
    let measured = forward_model(&TRUTH, &c).unwrap();
    let omega_c1 = anchor_omega_c1(&s, TRUTH.t, 0.0, TRUTH.lambda_hv, 1.0)
        .unwrap()
        .unwrap();
    let mut cfg = all_free();
    cfg.strategy = Strategy::OmegaC1Anchor {
        omega_c1,
        omega_v: 0.0,
    };
    let r = fit_spectrum(&measured, &c, &cfg).unwrap();
    assert_recovered(&r, &TRUTH);
    assert!(r.trace.iter().any(|e| e.stage == "lambda_HV anchor"));
}

#[test]
fn saturated_single_spectrum_is_degenerate() {
    let c = ctx(8.0, 0.1, Branch::Parted);
    let measured = forward_model(&TRUTH, &c).unwrap();
    match fit_spectrum(&measured, &c, &all_free()) {
        Err(Error::Degenerate { first, second, .. }) => {
            assert_eq!((first.as_str(), second.as_str()), ("lambda_HV", "dHoverH"));
        }
        other => panic!("expected a degeneracy error, got {other:?}"),
    }
    // Either parameter alone is still resolved.
    let cfg = FitConfig::new(
        vec![Param::LambdaHv],
        Params {
            lambda_hv: 2.7,
            ..TRUTH
        },
        LOWER,
        UPPER,
    );
    let r = fit_spectrum(&measured, &c, &cfg).unwrap();
    assert!((r.lambda_hv - TRUTH.lambda_hv).abs() / TRUTH.lambda_hv < 0.02);
}

fn result_at(p: Params, c: &FixedContext, delta_a: f64) -> FitResult {
    let calculated = forward_model(&p, c).unwrap();
    FitResult {
        t: p.t,
        lambda_hv: p.lambda_hv,
        lambda_interval: (p.lambda_hv, p.lambda_hv),
        dh_over_h: p.dh_over_h,
        delta_a,
        partner_delta_a: None,
        criteria: Criteria {
            edge_overlap: true,
            cf_peak_match: true,
            delta_a_ok: true,
        },
        trace: vec![],
        calculated,
    }
}

#[test]
fn saturated_interval_is_much_wider() {
    let lin_ctx = ctx(0.7, 0.0, Branch::Extended);
    let lin_p = Params {
        t: 0.36,
        lambda_hv: 5.3,
        dh_over_h: 8.8e-4,
    };
    let sat_ctx = ctx(8.0, 0.1, Branch::Parted);
    let width = |c: &FixedContext, p: Params| {
        let map = sensitivity_map(&p, c, &default_lambda_grid(p.lambda_hv, 1)).unwrap();
        let (lo, hi) = lambda_uncertainty(&result_at(p, c, 0.02), &map).unwrap();
        assert!(lo <= p.lambda_hv && p.lambda_hv <= hi);
        hi - lo
    };
    let (wl, ws) = (width(&lin_ctx, lin_p), width(&sat_ctx, TRUTH));
    assert!(ws >= 3.0 * wl, "linear {wl}, saturated {ws}");
}

fn field_file(spec: &Spectrum, shift: f64, slope: f64, offset: f64, down: bool) -> String {
    let f = spec.to_frequency_shift().unwrap().to_field().unwrap();
    let mut rows: Vec<String> =
        f.x.iter()
            .zip(&f.y)
            .map(|(h, y)| format!("{},{}", h + shift, y + slope * (h - f.x[0]) + offset))
            .collect();
    if down {
        rows.reverse();
    }
    format!(
        "# axis=field\n# nu_rf={}\n# H_L={}\nx,absorption\n{}\n",
        f.meta.nu_rf.unwrap(),
        f.meta.h_l.unwrap(),
        rows.join("\n")
    )
}

#[test]
fn ingestion_recovers_baseline_and_lag() {
    let c = ctx(0.9, 0.1, Branch::Parted);
    let truth = forward_model(&TRUTH, &c).unwrap();
    let f = truth.to_frequency_shift().unwrap().to_field().unwrap();
    let (h0, h1) = (f.x[0], f.x[f.x.len() - 1]);
    let span = h1 - h0;
    let windows = [(h0, h0 + 0.08 * span), (h1 - 0.08 * span, h1)];
    let lag = 2e-5;
    let peak = f.y.iter().cloned().fold(0.0, f64::max);
    let up = field_file(&truth, lag, 0.3 * peak / span, 0.1 * peak, false);
    let down = field_file(&truth, -lag, 0.3 * peak / span, 0.1 * peak, true);
    let fix = SweepCorrection { lag };
    let a = ingest_text(&up, fix, &windows, None).unwrap();
    let b = ingest_text(&down, fix, &windows, None).unwrap();
    let reference = truth.to_frequency_shift().unwrap();
    assert!(area_mismatch(&reference, &a).unwrap() < 0.01);
    assert!(area_mismatch(&a, &b).unwrap() < 1e-6);
    let raw_a = ingest_text(&up, SweepCorrection { lag: 0.0 }, &windows, None).unwrap();
    let raw_b = ingest_text(&down, SweepCorrection { lag: 0.0 }, &windows, None).unwrap();
    assert!(area_mismatch(&raw_a, &raw_b).unwrap() > 0.05);

    let reduced = ingest_text(&up, fix, &windows, truth.meta.omega_b).unwrap();
    assert!(area_mismatch(&truth, &reduced).unwrap() < 0.01);

    let no_hl: String = up
        .lines()
        .filter(|l| !l.starts_with("# H_L"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(
        matches!(ingest_text(&no_hl, fix, &windows, None), Err(Error::MissingKey(k)) if k == "H_L")
    );
    let mut lines: Vec<&str> = up.lines().collect();
    lines.swap(10, 11);
    assert!(ingest_text(&lines.join("\n"), fix, &windows, None).is_err());
}

#[test]
fn susceptibility_closes_through_yosida() {
    let s = Setup::default();
    let mat = s.material(0.2, None).unwrap();
    let chi = susceptibility_ratio(0.2, mat.gap, -0.75).unwrap();
    let tex = s
        .solve(Branch::Parted, &mat, &s.flow(0.9, 0.1).unwrap())
        .unwrap();
    let grid = RadialGrid::new(s.radius, s.step).unwrap();
    let normal_tex = Texture::from_angles(
        grid,
        vec![0.0; grid.len()],
        vec![0.0; grid.len()],
        Branch::Simple,
    )
    .unwrap();
    let raw = |t: &Texture, amp: f64| {
        let mut sp = broaden(
            &line_shape(t, SPECTRUM_BINS, SPECTRUM_RANGE).unwrap(),
            8.8e-4,
            s.nu_rf,
            mat.leggett_freq,
            s.nu_rf,
        )
        .unwrap();
        sp.y.iter_mut().for_each(|y| *y *= amp);
        sp
    };
    let ratio = susceptibility_from_areas(&raw(&tex, chi), &raw(&normal_tex, 1.0)).unwrap();
    assert!((ratio - chi).abs() / chi < 0.01);
}
