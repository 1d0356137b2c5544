//! Decision tree over the bracket-consistency conditions: which
//! non-quadratic metrizability class a connection profile belongs to, if
//! any, with a per-condition diagnostic ledger.
//!
//! Zero-testing analytic functions on a finite grid is undecidable in
//! general; the classifier combines the evaluation grid with a seeded
//! off-grid confirmation batch and reports every consulted condition with
//! its max residual, scale, and failure witness.

use crate::connection::{ConnError, ConnectionProfile};
use crate::exprlang::Ex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;

/// Classification outcome labels: one per constructible solution class
/// plus the two rejection verdicts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    T1Power,
    T1Exponential,
    T1WSector,
    T1FlatBracket,
    T2Free2d,
    T2OneVar,
    RiemannianOnly,
    None,
    Mirrored(Box<Label>),
}

impl Label {
    /// Whether the constructor can realize this label as a model.
    pub fn is_constructible(&self) -> bool {
        match self {
            Label::RiemannianOnly | Label::None => false,
            Label::Mirrored(inner) => inner.is_constructible(),
            _ => true,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::T1Power => write!(f, "T1-power"),
            Label::T1Exponential => write!(f, "T1-exponential"),
            Label::T1WSector => write!(f, "T1-wsector"),
            Label::T1FlatBracket => write!(f, "T1-flatbracket"),
            Label::T2Free2d => write!(f, "T2-free2D"),
            Label::T2OneVar => write!(f, "T2-onevar"),
            Label::RiemannianOnly => write!(f, "riemannian-only"),
            Label::None => write!(f, "none"),
            Label::Mirrored(inner) => write!(f, "mirrored({inner})"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One consulted condition: id, max residual over the evaluation points,
/// the scale it was compared against, verdict, and the worst point.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionEntry {
    pub id: String,
    pub residual: f64,
    pub scale: f64,
    pub pass: bool,
    /// False for purely informational entries that do not gate the label.
    pub gating: bool,
    pub witness: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationReport {
    pub label: Label,
    pub conditions: Vec<ConditionEntry>,
    pub tol_zero: f64,
    pub grid: (usize, usize),
    pub seed: u64,
}

impl ClassificationReport {
    pub fn condition(&self, id: &str) -> Option<&ConditionEntry> {
        self.conditions.iter().find(|c| c.id == id)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifySettings {
    pub nt: usize,
    pub nr: usize,
    pub tol_zero: f64,
    pub seed: u64,
    pub random_batch: usize,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings { nt: 21, nr: 21, tol_zero: 1e-9, seed: 0, random_batch: 50 }
    }
}

impl ClassifySettings {
    fn points(&self, pr: &ConnectionProfile) -> Vec<(f64, f64)> {
        let mut pts = pr.domain.grid(self.nt, self.nr);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.random_batch {
            pts.push(pr.domain.sample(&mut rng));
        }
        pts
    }
}

/// Max |expr| over the points with the worst point.
fn field_max(ex: &Ex, pts: &[(f64, f64)]) -> Result<(f64, (f64, f64)), ConnError> {
    let mut max = 0.0f64;
    let mut witness = pts[0];
    for &(t, r) in pts {
        let v = ex.eval(&[t, r])?.abs();
        if v > max {
            max = v;
            witness = (t, r);
        }
    }
    Ok((max, witness))
}

fn zero_entry(
    id: &str,
    ex: &Ex,
    pts: &[(f64, f64)],
    tol: f64,
    gating: bool,
) -> Result<ConditionEntry, ConnError> {
    let (max, witness) = field_max(ex, pts)?;
    let scale = 1.0 + max;
    let pass = max <= tol * scale;
    Ok(ConditionEntry {
        id: id.to_string(),
        residual: max,
        scale,
        pass,
        gating,
        witness: (!pass).then_some(witness),
    })
}

/// Residual condition `lhs == rhs`, scaled by the magnitudes of both sides.
fn resid_entry(
    id: &str,
    lhs: &Ex,
    rhs: &Ex,
    pts: &[(f64, f64)],
    tol: f64,
) -> Result<ConditionEntry, ConnError> {
    let diff = lhs - rhs;
    let (dmax, witness) = field_max(&diff, pts)?;
    let (lmax, _) = field_max(lhs, pts)?;
    let (rmax, _) = field_max(rhs, pts)?;
    let scale = 1.0f64.max(lmax).max(rmax);
    let pass = dmax <= tol * scale;
    Ok(ConditionEntry {
        id: id.to_string(),
        residual: dmax,
        scale,
        pass,
        gating: true,
        witness: (!pass).then_some(witness),
    })
}

/// Structural necessity: `k11 = k12 = 0` identically.
pub fn check_k11_k12(
    pr: &ConnectionProfile,
    settings: &ClassifySettings,
) -> Result<Vec<ConditionEntry>, ConnError> {
    let pts = settings.points(pr);
    Ok(vec![
        zero_entry("k11_zero", pr.k_ex(11), &pts, settings.tol_zero, true)?,
        zero_entry("k12_zero", pr.k_ex(12), &pts, settings.tol_zero, true)?,
    ])
}

/// The six proportionality conditions forcing `[delta_t, delta_w]` and
/// `[delta_r, delta_w]` to be multiples of `delta_w`.
pub fn check_dw_proportionality(
    pr: &ConnectionProfile,
    settings: &ClassifySettings,
) -> Result<Vec<ConditionEntry>, ConnError> {
    let pts = settings.points(pr);
    let cv = pr.curvature_exprs();
    let d = pr.derived_exprs();
    let a = |i: usize| cv.a[i - 1].clone();
    let ab_c = &d.a * &d.b + &d.c;
    let tol = settings.tol_zero;
    Ok(vec![
        resid_entry("dw_prop_a6", &a(6), &(&d.a * a(7)), &pts, tol)?,
        resid_entry("dw_prop_a8", &a(8), &(&d.b * a(7)), &pts, tol)?,
        resid_entry("dw_prop_a9", &a(9), &(&ab_c * a(7)), &pts, tol)?,
        resid_entry("dw_prop_a10", &a(10), &(&d.a * a(11)), &pts, tol)?,
        resid_entry("dw_prop_a12", &a(12), &(&d.b * a(11)), &pts, tol)?,
        resid_entry("dw_prop_a13", &a(13), &(&ab_c * a(11)), &pts, tol)?,
    ])
}

/// Necessary vanishing of the combination fields A, B, C.
pub fn check_abc(
    pr: &ConnectionProfile,
    settings: &ClassifySettings,
) -> Result<Vec<ConditionEntry>, ConnError> {
    let pts = settings.points(pr);
    let d = pr.derived_exprs();
    let cv = pr.curvature_exprs();
    // Scale against the curvature magnitudes entering the combinations.
    let mut scale = 1.0f64;
    for i in 0..5 {
        scale = scale.max(field_max(&cv.a[i], &pts)?.0);
    }
    let mut out = Vec::new();
    for (idx, name) in [(0usize, "cap_A"), (1, "cap_B"), (2, "cap_C")] {
        let (max, witness) = field_max(&d.cap[idx], &pts)?;
        let pass = max <= settings.tol_zero * scale;
        out.push(ConditionEntry {
            id: name.to_string(),
            residual: max,
            scale,
            pass,
            gating: true,
            witness: (!pass).then_some(witness),
        });
    }
    Ok(out)
}

/// Iterated-bracket consistency. With `(D, E, F)` not all zero the double
/// brackets must be pointwise proportional to `[delta_t, delta_r]`: all 2x2
/// minors of `([X_i], [a_i])` vanish for both `X = A` and `X = B`. In the
/// trivial-`delta_w` branch the six minor conditions of the one-variable
/// class apply instead.
pub fn check_iterated_brackets(
    pr: &ConnectionProfile,
    settings: &ClassifySettings,
    trivial_dw: bool,
) -> Result<Vec<ConditionEntry>, ConnError> {
    let pts = settings.points(pr);
    let cv = pr.curvature_exprs();
    let tol = settings.tol_zero;
    let mut out = Vec::new();
    if trivial_dw {
        for (tag, x) in [("t", &cv.dbl_t), ("r", &cv.dbl_r)] {
            let a = &cv.a;
            let minors = [
                &x[2] * &a[0] - &x[0] * &a[2],
                &x[3] * &a[1] - &x[1] * &a[3],
                &x[2] * &a[1] - &x[1] * &a[2] - &x[0] * &a[3] + &x[3] * &a[0],
            ];
            let mut scale = 1.0f64;
            for i in 0..4 {
                scale = scale.max(field_max(&x[i], &pts)?.0 * field_max(&a[i], &pts)?.0);
            }
            let mut max = 0.0f64;
            let mut witness = pts[0];
            for minor in &minors {
                let (v, w) = field_max(minor, &pts)?;
                if v > max {
                    max = v;
                    witness = w;
                }
            }
            let pass = max <= tol * scale;
            out.push(ConditionEntry {
                id: format!("iter_minors_{tag}"),
                residual: max,
                scale,
                pass,
                gating: true,
                witness: (!pass).then_some(witness),
            });
        }
    } else {
        for (tag, x) in [("t", &cv.dbl_t), ("r", &cv.dbl_r)] {
            let mut max = 0.0f64;
            let mut scale = 1.0f64;
            let mut witness = pts[0];
            for i in 0..5 {
                for j in (i + 1)..5 {
                    let minor = &x[i] * &cv.a[j] - &x[j] * &cv.a[i];
                    let (v, w) = field_max(&minor, &pts)?;
                    if v > max {
                        max = v;
                        witness = w;
                    }
                    scale = scale
                        .max(field_max(&(&x[i] * &cv.a[j]), &pts)?.0)
                        .max(field_max(&(&x[j] * &cv.a[i]), &pts)?.0);
                }
            }
            let pass = max <= tol * scale;
            out.push(ConditionEntry {
                id: format!("iter_rank_{tag}"),
                residual: max,
                scale,
                pass,
                gating: true,
                witness: (!pass).then_some(witness),
            });
        }
    }
    Ok(out)
}

/// Full decision tree. Every consulted condition lands in the report's
/// ledger even after a failure on the chosen path.
pub fn classify(
    pr: &ConnectionProfile,
    settings: &ClassifySettings,
) -> Result<ClassificationReport, ConnError> {
    let pts = settings.points(pr);
    let tol = settings.tol_zero;
    let mut conditions = Vec::new();

    let report = |label: Label, conditions: Vec<ConditionEntry>| ClassificationReport {
        label,
        conditions,
        tol_zero: tol,
        grid: (settings.nt, settings.nr),
        seed: settings.seed,
    };

    // (0) structural necessity k11 = k12 = 0.
    let k11_12 = check_k11_k12(pr, settings)?;
    let k11_12_pass = k11_12.iter().all(|c| c.pass);
    conditions.extend(k11_12);
    if !k11_12_pass {
        return Ok(report(Label::None, conditions));
    }

    // Branch selection on k7..k10.
    let mut k_zero = [false; 4];
    for (slot, i) in (7..=10).enumerate() {
        let e = zero_entry(&format!("k{i}_zero"), pr.k_ex(i), &pts, tol, false)?;
        k_zero[slot] = e.pass;
        conditions.push(e);
    }
    let [k7_zero, k8_zero, k9_zero, k10_zero] = k_zero;

    if k7_zero && k8_zero && k9_zero && k10_zero {
        // (1) trivial delta_w branch.
        let cv = pr.curvature_exprs();
        let mut bracket_max = 0.0f64;
        let mut witness = pts[0];
        for i in 0..4 {
            let (v, w) = field_max(&cv.a[i], &pts)?;
            if v > bracket_max {
                bracket_max = v;
                witness = w;
            }
        }
        let bracket_zero = bracket_max <= tol * (1.0 + bracket_max);
        conditions.push(ConditionEntry {
            id: "bracket_tr_zero".into(),
            residual: bracket_max,
            scale: 1.0 + bracket_max,
            pass: bracket_zero,
            gating: bracket_zero,
            witness: (!bracket_zero).then_some(witness),
        });
        if bracket_zero {
            return Ok(report(Label::T2Free2d, conditions));
        }
        let minors = check_iterated_brackets(pr, settings, true)?;
        let minors_pass = minors.iter().all(|c| c.pass);
        conditions.extend(minors);
        return Ok(report(
            if minors_pass { Label::T2OneVar } else { Label::None },
            conditions,
        ));
    }

    if k10_zero {
        if k7_zero {
            // delta_w nontrivial only through k8, k9: forces d_w L = 0,
            // which cannot give a nondegenerate metric.
            conditions.push(ConditionEntry {
                id: "dw_degenerate_k7_k10_zero".into(),
                residual: 1.0,
                scale: 1.0,
                pass: false,
                gating: true,
                witness: None,
            });
            return Ok(report(Label::None, conditions));
        }
        // Mirrored case: classify the role-swapped profile.
        let swapped = pr.swap_roles();
        let mut sw_settings = *settings;
        (sw_settings.nt, sw_settings.nr) = (settings.nr, settings.nt);
        let inner = classify(&swapped, &sw_settings)?;
        for mut c in inner.conditions {
            c.id = format!("mirrored:{}", c.id);
            conditions.push(c);
        }
        return Ok(report(Label::Mirrored(Box::new(inner.label)), conditions));
    }

    // (2) nontrivial delta_w with usable k10.
    let dw = check_dw_proportionality(pr, settings)?;
    let xi_coeff_fail = dw
        .iter()
        .any(|c| !c.pass && (c.id == "dw_prop_a6" || c.id == "dw_prop_a10"));
    let dw_other_fail = dw
        .iter()
        .any(|c| !c.pass && c.id != "dw_prop_a6" && c.id != "dw_prop_a10");
    conditions.extend(dw);

    let abc = check_abc(pr, settings)?;
    let b_fail = abc.iter().any(|c| !c.pass && c.id == "cap_B");
    let ac_fail = abc.iter().any(|c| !c.pass && c.id != "cap_B");
    conditions.extend(abc);

    let d = pr.derived_exprs();
    let mut d_zero = zero_entry("cap_D_zero", &d.cap[3], &pts, tol, false)?;
    let e_zero = zero_entry("cap_E_zero", &d.cap[4], &pts, tol, false)?;
    let f_zero = zero_entry("cap_F_zero", &d.cap[5], &pts, tol, false)?;
    let def_all_zero = d_zero.pass && e_zero.pass && f_zero.pass;
    let (d_nonzero, e_nonzero, f_nonzero) = (!d_zero.pass, !e_zero.pass, !f_zero.pass);
    if d_zero.pass && e_nonzero {
        // The exponential label requires D = 0 identically.
        d_zero.gating = true;
    }
    conditions.push(d_zero);
    conditions.push(e_zero);
    conditions.push(f_zero);

    let iter = check_iterated_brackets(pr, settings, false)?;
    let iter_pass = iter.iter().all(|c| c.pass);
    // With D = E = F = 0 the double brackets are automatically consistent;
    // the rank entries are then informational only.
    let iter_required = !def_all_zero;
    conditions.extend(iter.into_iter().map(|mut c| {
        c.gating = iter_required;
        c
    }));

    // Quadratic-forcing failures yield riemannian-only; degeneracy-forcing
    // failures yield none.
    if xi_coeff_fail || b_fail {
        return Ok(report(Label::RiemannianOnly, conditions));
    }
    if dw_other_fail || ac_fail {
        return Ok(report(Label::None, conditions));
    }
    if iter_required && !iter_pass {
        return Ok(report(Label::None, conditions));
    }

    if !def_all_zero {
        if d_nonzero {
            return Ok(report(Label::T1Power, conditions));
        }
        if e_nonzero {
            return Ok(report(Label::T1Exponential, conditions));
        }
        // D = E = 0 with F != 0 forces the trivial solution.
        debug_assert!(f_nonzero);
        conditions.push(ConditionEntry {
            id: "def_f_only".into(),
            residual: 1.0,
            scale: 1.0,
            pass: false,
            gating: true,
            witness: None,
        });
        return Ok(report(Label::None, conditions));
    }

    let mut b_zero = zero_entry("b_zero", &d.b, &pts, tol, false)?;
    let mut c_zero = zero_entry("c_zero", &d.c, &pts, tol, false)?;
    let bc_zero = b_zero.pass && c_zero.pass;
    if bc_zero {
        // The w-sector label requires both; otherwise they only select the
        // branch and may legitimately fail.
        b_zero.gating = true;
        c_zero.gating = true;
    }
    conditions.push(b_zero);
    conditions.push(c_zero);
    // Informational: whether the field a vanishes (recorded, not gated).
    conditions.push(zero_entry("a_zero_info", &d.a, &pts, tol, false)?);

    if bc_zero {
        return Ok(report(Label::T1WSector, conditions));
    }

    let cv = pr.curvature_exprs();
    let mut a15_max = 0.0f64;
    let mut witness = pts[0];
    for i in 0..5 {
        let (v, w) = field_max(&cv.a[i], &pts)?;
        if v > a15_max {
            a15_max = v;
            witness = w;
        }
    }
    let a15_zero = a15_max <= tol * (1.0 + a15_max);
    conditions.push(ConditionEntry {
        id: "a15_zero".into(),
        residual: a15_max,
        scale: 1.0 + a15_max,
        pass: a15_zero,
        gating: true,
        witness: (!a15_zero).then_some(witness),
    });
    if a15_zero {
        return Ok(report(Label::T1FlatBracket, conditions));
    }
    Ok(report(Label::RiemannianOnly, conditions))
}
