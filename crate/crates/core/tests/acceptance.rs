//! Acceptance gate: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them). Every
//! tolerance is pinned here, in code.

use berwald_core::classifier::{classify, ClassifySettings, Label};
use berwald_core::connection::ConnectionProfile;
use berwald_core::constructor::{build_transport, construct, ConstructError, FreeFunctions};
use berwald_core::corpus;
use berwald_core::exprlang::{parse, parse_with_vars, Expr};
use berwald_core::geom;
use berwald_core::jets::VJet;
use berwald_core::model::{FinslerModel, SamplePoint};
use berwald_core::verifier::{
    conservation_check, convergence_order, geodesic, residual_sweep, Dynamics, GeodesicOptions,
    SweepSettings, Termination, VerificationReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn classify_label(pr: &ConnectionProfile) -> Label {
    classify(pr, &ClassifySettings::default()).unwrap().label
}

fn build(pr: &ConnectionProfile) -> FinslerModel {
    let label = classify_label(pr);
    construct(pr, &label, &FreeFunctions::default()).unwrap()
}

fn sweep(pr: &ConnectionProfile, m: &FinslerModel, samples: usize) -> VerificationReport {
    let settings = SweepSettings { samples, tol_residual: 1e-7, ..Default::default() };
    residual_sweep(m, pr, &settings)
}

/// Criterion 1: for each of the six labels a gate-passing corpus profile
/// exists, the gate ledger validates it, and the constructed model passes
/// the residual sweep below 1e-7 over at least 100 samples.
#[test]
fn acceptance_1_classification_loop_closure() {
    let cases: [(&str, ConnectionProfile, Label); 6] = [
        ("zero", corpus::zero(), Label::T2Free2d),
        ("minkowski", corpus::minkowski(), Label::T1FlatBracket),
        ("power", corpus::power_profile(), Label::T1Power),
        ("exponential", corpus::exponential_profile(), Label::T1Exponential),
        ("wsector", corpus::wsector_profile(), Label::T1WSector),
        ("onevar", corpus::onevar_profile(), Label::T2OneVar),
    ];
    for (name, pr, want) in cases {
        let report = classify(&pr, &ClassifySettings::default()).unwrap();
        assert_eq!(report.label, want, "{name}: wrong label");
        for cond in &report.conditions {
            if cond.gating {
                assert!(cond.pass, "{name}: gate {} failed ({:.3e})", cond.id, cond.residual);
            }
        }
        let model = construct(&pr, &report.label, &FreeFunctions::default()).unwrap();
        let ver = sweep(&pr, &model, 120);
        assert!(ver.samples_accepted >= 100, "{name}: only {} samples", ver.samples_accepted);
        assert!(
            ver.overall_pass && ver.max_residual() < 1e-7,
            "{name}: max residual {:.3e}",
            ver.max_residual()
        );
        println!(
            "ACCEPTANCE 1 [{name} -> {want}]: PASS (max residual {:.3e}, {} samples)",
            ver.max_residual(),
            ver.samples_accepted
        );
    }
}

/// Criterion 2: Schwarzschild classifies riemannian-only through the
/// quadratic-forcing witness B != 0; a profile with k11 != 0 classifies
/// none.
#[test]
fn acceptance_2_necessity_checks() {
    let report = classify(&corpus::schwarzschild(), &ClassifySettings::default()).unwrap();
    assert_eq!(report.label, Label::RiemannianOnly);
    let b = report.condition("cap_B").unwrap();
    assert!(!b.pass && b.residual > 1e-6, "B residual {:.3e}", b.residual);
    let k11 = classify(&corpus::k11_profile(), &ClassifySettings::default()).unwrap();
    assert_eq!(k11.label, Label::None);
    println!(
        "ACCEPTANCE 2: PASS (schwarzschild -> riemannian-only with |B| = {:.3e}; k11 != 0 -> none)",
        b.residual
    );
}

/// Criterion 3: the Berwald curvature norm of every constructed model stays
/// below 1e-7 at 100 random admissible samples; for the structurally
/// rank-deficient w-sector class the spray does not exist and the
/// first-order system is the Berwald certificate (recorded as such). The
/// non-Berwald control exceeds 1e-3.
#[test]
fn acceptance_3_berwald_curvature() {
    let regular: [(&str, ConnectionProfile); 5] = [
        ("zero", corpus::zero()),
        ("minkowski", corpus::minkowski()),
        ("power", corpus::power_profile()),
        ("exponential", corpus::exponential_profile()),
        ("onevar", corpus::onevar_profile()),
    ];
    for (name, pr) in regular {
        let model = build(&pr);
        let ver = sweep(&pr, &model, 100);
        let bw = ver.check("berwald_norm").unwrap();
        assert!(bw.applicable, "{name}: berwald check unexpectedly skipped");
        assert!(bw.samples >= 100, "{name}: {} berwald samples", bw.samples);
        assert!(bw.max_residual < 1e-7, "{name}: berwald norm {:.3e}", bw.max_residual);
        println!(
            "ACCEPTANCE 3 [{name}]: PASS (berwald norm {:.3e} at {} samples)",
            bw.max_residual, bw.samples
        );
    }
    // w-sector: singular metric on the whole cone; the delta-system is the
    // certificate and must hold at the analytic tolerance.
    let pr = corpus::wsector_profile();
    let model = build(&pr);
    let ver = sweep(&pr, &model, 100);
    let bw = ver.check("berwald_norm").unwrap();
    assert!(!bw.applicable);
    assert!(bw.note.as_deref().unwrap_or("").contains("singular"));
    assert!(ver.overall_pass && ver.max_residual() < 1e-7);
    println!(
        "ACCEPTANCE 3 [wsector]: PASS (spray undefined on rank-deficient metric; \
         first-order certificate max residual {:.3e})",
        ver.max_residual()
    );
    // Negative control.
    let control = corpus::perturbed_nonberwald_model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max = 0.0f64;
    let mut n = 0;
    while n < 20 {
        let p = SamplePoint::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(1.0..3.0),
            rng.gen_range(0.6..2.5),
            rng.gen_range(0.0..6.0),
            core::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
        );
        let Ok(p) = p else { continue };
        if !control.admissible(&p) || p.vel[0] + p.vel[1] < 0.3 {
            continue;
        }
        if let Ok(v) = geom::berwald_curvature_norm(&control, &p) {
            max = max.max(v);
            n += 1;
        }
    }
    assert!(max > 1e-3, "control berwald norm {max:.3e}");
    println!("ACCEPTANCE 3 [control]: PASS (non-Berwald norm {max:.3e} > 1e-3)");
}

/// Criterion 4: the appendix identities on a 21x21 grid for 20 randomized
/// smooth profiles: a5 = a9 - a12 unconditionally, and the cross-identities
/// F = (d_t N - d_r M)/2, D = (d_t N~ - d_r M~)/2 on the family where the
/// two delta_w gates they depend on hold identically.
#[test]
fn acceptance_4_appendix_identities() {
    let mut worst_a5 = 0.0f64;
    for seed in 0..20 {
        let pr = corpus::random_smooth_profile(seed);
        for (t, r) in pr.domain.grid(21, 21) {
            let ct = pr.curvature_table(t, r).unwrap();
            let scale = 1.0f64.max(ct.a[8].abs()).max(ct.a[11].abs());
            worst_a5 = worst_a5.max((ct.a[4] - (ct.a[8] - ct.a[11])).abs() / scale);
        }
    }
    assert!(worst_a5 < 1e-8, "a5 identity residual {worst_a5:.3e}");

    let mut worst_f = 0.0f64;
    let mut worst_d = 0.0f64;
    for seed in 0..20 {
        let pr = corpus::random_gate_profile(seed);
        let d = pr.derived_exprs();
        let f_rhs = 0.5 * (d.n.diff(0) - d.m.diff(1));
        let d_rhs = 0.5 * (d.n_tilde.diff(0) - d.m_tilde.diff(1));
        for (t, r) in pr.domain.grid(21, 21) {
            let at = [t, r];
            let f_lhs = d.cap[5].eval(&at).unwrap();
            let d_lhs = d.cap[3].eval(&at).unwrap();
            let fr = f_rhs.eval(&at).unwrap();
            let dr = d_rhs.eval(&at).unwrap();
            worst_f = worst_f.max((f_lhs - fr).abs() / 1.0f64.max(f_lhs.abs()));
            worst_d = worst_d.max((d_lhs - dr).abs() / 1.0f64.max(d_lhs.abs()));
        }
    }
    assert!(worst_f < 1e-8, "F identity residual {worst_f:.3e}");
    assert!(worst_d < 1e-8, "D identity residual {worst_d:.3e}");
    println!(
        "ACCEPTANCE 4: PASS (a5 residual {worst_a5:.3e}; F residual {worst_f:.3e}; \
         D residual {worst_d:.3e} over 20 profiles x 21x21 grid)"
    );
}

/// Criterion 5: lambda = F/D and mu = F/E are grid-constant on the
/// gate-passing corpus profiles (spread < 1e-8), and K, T of the
/// one-variable class are p-independent (spread < 1e-7).
#[test]
fn acceptance_5_constancy_claims() {
    let power = build(&corpus::power_profile());
    let params = power.info().params;
    let get = |name: &str| params.iter().find(|p| p.name == name).unwrap().value;
    let lambda = get("lambda");
    let lambda_spread = get("lambda_spread").abs();
    assert!((lambda - 3.0).abs() < 1e-9);
    assert!(lambda_spread < 1e-8, "lambda spread {lambda_spread:.3e}");

    let expo = build(&corpus::exponential_profile());
    let params = expo.info().params;
    let get = |name: &str| params.iter().find(|p| p.name == name).unwrap().value;
    let mu_spread = get("mu_spread").abs();
    assert!((get("mu_center") + 1.0).abs() < 1e-9);
    assert!(mu_spread < 1e-8, "mu spread {mu_spread:.3e}");

    let onevar = build(&corpus::onevar_profile());
    let params = onevar.info().params;
    let get = |name: &str| params.iter().find(|p| p.name == name).unwrap().value;
    let kk = get("K_p_spread");
    let tt = get("T_p_spread");
    assert!(kk < 1e-7, "K spread {kk:.3e}");
    assert!(tt < 1e-7, "T spread {tt:.3e}");
    println!(
        "ACCEPTANCE 5: PASS (lambda spread {lambda_spread:.3e}, mu spread {mu_spread:.3e}, \
         K spread {kk:.3e}, T spread {tt:.3e})"
    );
}

const JET_CORPUS: [(&str, [f64; 4]); 15] = [
    ("va^2 - vb^2 + va*vb*vc - vd^3", [0.7, -0.4, 0.5, 0.9]),
    ("sin(va)*cos(vb) + vc", [0.3, 0.8, -0.2, 0.1]),
    ("exp(0.3*va + 0.2*vb - 0.1*vc)", [0.5, -0.6, 0.4, 0.0]),
    ("sqrt(4 + va^2 + vb^2 + vc^2 + vd^2)", [0.9, 0.3, -0.7, 0.5]),
    ("sinh(0.4*va + 0.3*vb) + cos(0.5*vc - 0.2*vd)", [1.0, 1.1, 0.9, 1.2]),
    ("1/(2 + va + 0.5*vb)", [0.4, -0.3, 0.0, 0.0]),
    ("log(3 + va + vb + vc)", [0.5, 0.2, -0.4, 0.0]),
    ("tanh(0.5*va)*sinh(0.3*vb) + cosh(0.2*vc)", [0.6, 0.7, -0.5, 0.0]),
    ("va*vb*vc*vd", [0.8, -0.9, 0.7, 0.6]),
    ("exp(0.2*(va^2 + vb^2 - vc^2 - vd^2))", [0.5, 0.4, 0.3, 0.2]),
    ("sin(va*vb)/(2 + vc)", [0.7, 0.5, -0.3, 0.0]),
    ("va^5 - 2*va^3*vb^2 + vb*vc^3*vd", [0.6, 0.8, -0.5, 0.4]),
    ("exp(va)*sin(vb) - exp(vc)*cos(vd)", [0.2, 0.5, -0.4, 0.7]),
    ("(1 + va^2)^0.25 * (1 + vb^2)^0.75", [0.8, -0.6, 0.0, 0.0]),
    ("tan(0.3*va + 0.1*vb*vc)", [0.5, 0.4, 0.6, 0.0]),
];

const TR_CORPUS: [&str; 15] = [
    "exp(t)*sin(r) + r^3/(1 + t^2)",
    "sqrt(1 + t^2 + r^2)",
    "log(2 + sin(t))*cosh(r/2)",
    "t^2*r - r/(t - 4)",
    "tanh(t*r)/(2 + cos(r))",
    "1/(r*(r + 2))",
    "exp(0.5*t - 0.25*r)",
    "sin(t)*sin(r) + cos(t*r)",
    "r^1.5 + t*r^0.5",
    "(t + r)^3/(1 + r^2)",
    "sinh(0.4*t)*r^2",
    "t/(1 + r) + r/(2 + t)",
    "exp(t*r/4)*cos(t)",
    "log(1 + r^2) - t^2/(3 + r)",
    "sqrt(2 + t^2*r^2)",
];

/// Nested Richardson-extrapolated central differences: each level applies
/// the five-point stencil `(-f(2h) + 8f(h) - 8f(-h) + f(-2h))/(12h)`, which
/// is exactly `(4 D(h) - D(2h))/3` for the plain central difference `D`.
/// Working at matched grids keeps the rounding floor at the coarse step.
fn fd_multi(f: &dyn Fn(&[f64; 4]) -> f64, x: [f64; 4], alpha: [u8; 4], h: f64) -> f64 {
    match alpha.iter().position(|&a| a > 0) {
        None => f(&x),
        Some(slot) => {
            let mut a2 = alpha;
            a2[slot] -= 1;
            let at = |shift: f64| {
                let mut y = x;
                y[slot] += shift;
                fd_multi(f, y, a2, h)
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        }
    }
}

/// Step-plateau selection: evaluate the stencil over a ladder of steps and
/// return the average of the best-agreeing adjacent pair (truncation
/// dominates large steps, rounding small ones; the plateau in between is
/// the accurate regime).
fn fd_auto(f: &dyn Fn(&[f64; 4]) -> f64, x: [f64; 4], alpha: [u8; 4], hs: &[f64]) -> f64 {
    let vals: Vec<f64> = hs.iter().map(|&h| fd_multi(f, x, alpha, h)).collect();
    let mut best = (f64::INFINITY, vals[0]);
    for pair in vals.windows(2) {
        let spread = (pair[0] - pair[1]).abs();
        if spread < best.0 {
            best = (spread, 0.5 * (pair[0] + pair[1]));
        }
    }
    best.1
}

/// Criterion 6: every jet partial of orders 1..5 and every symbolic
/// derivative agrees with Richardson-extrapolated central differences
/// within 1e-5 relative, over a 30-function smooth corpus.
#[test]
fn acceptance_6_differentiation_oracle_equivalence() {
    const VARS: [&str; 4] = ["va", "vb", "vc", "vd"];
    // Step ladders per derivative order for the plateau selection.
    let ladders: [&[f64]; 6] = [
        &[],
        &[2e-3, 5e-3, 1e-2],
        &[4e-3, 8e-3, 1.6e-2],
        &[8e-3, 1.4e-2, 2.4e-2],
        &[1.2e-2, 2e-2, 3.3e-2],
        &[1.2e-2, 2e-2, 3.3e-2],
    ];
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (src, base) in JET_CORPUS {
        let expr = parse_with_vars(src, &VARS).unwrap();
        let seeds = VJet::seed(base, 5).unwrap();
        let jet = expr.eval_jet(&seeds).unwrap();
        let f = |x: &[f64; 4]| expr.eval(x).unwrap();
        for alpha in VJet::multi_indices(5) {
            let order: usize = alpha.iter().map(|&a| a as usize).sum();
            if order == 0 {
                continue;
            }
            let fd = fd_auto(&f, base, *alpha, ladders[order]);
            let got = jet.partial(*alpha).unwrap();
            let rel = (got - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            assert!(
                rel <= 1e-5,
                "{src} alpha {alpha:?}: jet {got} vs fd {fd} (rel {rel:.3e})"
            );
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for src in TR_CORPUS {
        let expr = parse(src).unwrap();
        for var in 0..2usize {
            let d = expr.diff(var);
            for _ in 0..8 {
                let at = [rng.gen_range(0.2..1.4), rng.gen_range(0.6..2.4)];
                let fd = {
                    let h = 1e-4;
                    let eval = |shift: f64| {
                        let mut p = at;
                        p[var] += shift;
                        expr.eval(&p).unwrap()
                    };
                    let d1 = (eval(h) - eval(-h)) / (2.0 * h);
                    let d2 = (eval(h / 2.0) - eval(-h / 2.0)) / h;
                    (4.0 * d2 - d1) / 3.0
                };
                let got = d.eval(&at).unwrap();
                let rel = (got - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
                assert!(rel <= 1e-5, "{src} d{var} at {at:?}: {got} vs {fd}");
                checked += 1;
            }
        }
    }
    println!(
        "ACCEPTANCE 6: PASS ({checked} derivative comparisons over 30 functions, \
         worst relative deviation {worst:.3e})"
    );
}

/// Criterion 7: measured RK4 order >= 3.8; L-conservation drift < 1e-8
/// over 1000 steps at h = 1e-3 on constructed models; zero-profile
/// geodesics are straight lines to 1e-12.
#[test]
fn acceptance_7_geodesics() {
    let mink = corpus::minkowski();
    let p0 = SamplePoint::new(0.3, 2.0, 1.2, 0.1, [1.0, 0.5, 0.3, 0.25]).unwrap();
    let order = convergence_order(&Dynamics::Profile(&mink), &p0, 2e-2, 40);
    assert!(order >= 3.8, "measured order {order}");

    // Conservation on two constructed models along their own connections.
    let opts = GeodesicOptions { h: 1e-3, steps: 1000 };
    let mut drifts = Vec::new();
    for (name, pr, start) in [
        (
            "minkowski-flatbracket",
            corpus::minkowski(),
            SamplePoint::new(0.3, 2.5, 1.4, 0.0, [1.0, 0.3, 0.2, 0.15]).unwrap(),
        ),
        (
            "power",
            corpus::power_profile(),
            SamplePoint::new(-0.5, 0.4, 1.4, 0.0, [1.0, 0.25, 0.3, 0.2]).unwrap(),
        ),
    ] {
        let model = build(&pr);
        assert!(model.admissible(&start), "{name}: start not admissible");
        let traj = geodesic(&Dynamics::Profile(&pr), &start, &opts);
        assert_eq!(traj.termination, Termination::Completed, "{name}");
        let drift = conservation_check(&model, &traj).unwrap();
        assert!(drift < 1e-8, "{name}: drift {drift:.3e}");
        drifts.push((name, drift));
    }

    // Straight lines on the zero profile, exactly linear to 1e-12.
    let zero = corpus::zero();
    let start = SamplePoint::new(0.0, 1.2, 1.3, 0.0, [1.0, 1.0, 0.0, 0.0]).unwrap();
    let traj = geodesic(&Dynamics::Profile(&zero), &start, &GeodesicOptions { h: 1e-3, steps: 700 });
    assert_eq!(traj.termination, Termination::Completed);
    let mut worst = 0.0f64;
    for (i, p) in traj.states.iter().enumerate() {
        let s = i as f64 * 1e-3;
        worst = worst.max((p.t - s).abs()).max((p.r - (1.2 + s)).abs());
    }
    assert!(worst < 1e-12, "straight-line deviation {worst:.3e}");
    println!(
        "ACCEPTANCE 7: PASS (RK4 order {order:.2}; drifts {:?}; straight-line deviation {worst:.3e})",
        drifts
    );
}

/// Criterion 8: path-order-swapped parallel transport agrees to 1e-9 on
/// bracket-flat profiles; the discrepancy detector fires on a
/// bracket-non-flat profile.
#[test]
fn acceptance_8_transport_consistency() {
    let mut worst = 0.0f64;
    for (name, pr) in [
        ("zero", corpus::zero()),
        ("free2d-k1", corpus::free2d_k1()),
        ("minkowski", corpus::minkowski()),
    ] {
        let model = build(&pr);
        let disc = model
            .info()
            .params
            .iter()
            .find(|p| p.name == "path_discrepancy")
            .unwrap()
            .value;
        assert!(disc <= 1e-9, "{name}: path discrepancy {disc:.3e}");
        worst = worst.max(disc);
    }
    let nonflat = corpus::bracket_nonflat();
    let l0_src: Expr = parse_with_vars("sqrt(dt^4 + dr^4 + dw^4)", &["dt", "dr", "dw"]).unwrap();
    let res = build_transport(&nonflat, &l0_src, nonflat.domain.center(), None);
    let fired = match res {
        Err(ConstructError::BracketNonFlat(d)) => {
            assert!(d > 1e-7);
            d
        }
        _ => panic!("bracket non-flatness not detected"),
    };
    println!(
        "ACCEPTANCE 8: PASS (flat-path discrepancy <= {worst:.3e}; detector fired at {fired:.3e})"
    );
}
