//! The 12-function spherically symmetric torsion-free connection.
//!
//! A [`ConnectionProfile`] holds the free functions `k1..k12` of `(t, r)` as
//! expression trees, their symbolic first derivatives, and the derived
//! curvature machinery: the nonlinear-connection table, the curvature
//! coefficients `a1..a14`, the iterated-bracket coefficients `A1..A5`,
//! `B1..B5`, and the scalar fields `a, b, c`, `A..F`, their calligraphic
//! analogues, and the `M`-family. All derived fields are built as
//! expression trees once per profile and evaluated pointwise, so the
//! classifier's zero-tests are free of finite-difference noise.

use crate::exprlang::{Ex, Expr, ExprError};
use crate::model::SamplePoint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConnError {
    #[error("k10 vanishes at (t, r) = ({t}, {r}); mirrored-case handling required")]
    MirroredCase { t: f64, r: f64 },
    #[error("degenerate domain rectangle")]
    DegenerateDomain,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Evaluation rectangle `[t_min, t_max] x [r_min, r_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainRect {
    pub t_min: f64,
    pub t_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl DomainRect {
    pub fn new(t_min: f64, t_max: f64, r_min: f64, r_max: f64) -> Result<DomainRect, ConnError> {
        if !(t_min < t_max && r_min < r_max) {
            return Err(ConnError::DegenerateDomain);
        }
        Ok(DomainRect { t_min, t_max, r_min, r_max })
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.t_min + self.t_max), 0.5 * (self.r_min + self.r_max))
    }

    pub fn contains(&self, t: f64, r: f64) -> bool {
        t >= self.t_min && t <= self.t_max && r >= self.r_min && r <= self.r_max
    }

    pub fn transposed(&self) -> DomainRect {
        DomainRect {
            t_min: self.r_min,
            t_max: self.r_max,
            r_min: self.t_min,
            r_max: self.t_max,
        }
    }

    /// Uniform grid, inset from the boundary by 1% of each side length.
    pub fn grid(&self, nt: usize, nr: usize) -> Vec<(f64, f64)> {
        let (nt, nr) = (nt.max(2), nr.max(2));
        let dt = self.t_max - self.t_min;
        let dr = self.r_max - self.r_min;
        let (t0, t1) = (self.t_min + 0.01 * dt, self.t_max - 0.01 * dt);
        let (r0, r1) = (self.r_min + 0.01 * dr, self.r_max - 0.01 * dr);
        let mut pts = Vec::with_capacity(nt * nr);
        for i in 0..nt {
            let t = t0 + (t1 - t0) * i as f64 / (nt - 1) as f64;
            for j in 0..nr {
                let r = r0 + (r1 - r0) * j as f64 / (nr - 1) as f64;
                pts.push((t, r));
            }
        }
        pts
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> (f64, f64) {
        (
            rng.gen_range(self.t_min..self.t_max),
            rng.gen_range(self.r_min..self.r_max),
        )
    }
}

/// Curvature coefficients `a1..a14` and the iterated-bracket coefficients
/// `A1..A5` (from `[delta_t, [delta_t, delta_r]]`) and `B1..B5`
/// (from `[delta_r, [delta_t, delta_r]]`) at a point. All arrays 0-based.
#[derive(Clone, Debug)]
pub struct CurvatureTable {
    pub a: [f64; 14],
    pub dbl_t: [f64; 5],
    pub dbl_r: [f64; 5],
}

/// Scalar fields derived from the connection under `k10 != 0`:
/// `a, b, c`, the capitals `A..F` (`cap`), their calligraphic analogues
/// built from `A_i` (`cal_t`) and from `B_i` (`cal_r`), and the `M`-family.
#[derive(Clone, Debug)]
pub struct DerivedCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// A, B, C, D, E, F in order.
    pub cap: [f64; 6],
    pub cal_t: [f64; 6],
    pub cal_r: [f64; 6],
    pub m: f64,
    pub m_tilde: f64,
    pub n: f64,
    pub n_tilde: f64,
}

/// Symbolic forms of the curvature coefficients.
pub struct CurvatureExprs {
    pub a: [Ex; 14],
    pub dbl_t: [Ex; 5],
    pub dbl_r: [Ex; 5],
}

/// Symbolic forms of the derived scalar fields (contain divisions by `k10`;
/// evaluation fails where `k10 = 0`).
pub struct DerivedExprs {
    pub a: Ex,
    pub b: Ex,
    pub c: Ex,
    pub a_t: Ex,
    pub a_r: Ex,
    pub b_t: Ex,
    pub b_r: Ex,
    pub c_t: Ex,
    pub c_r: Ex,
    pub cap: [Ex; 6],
    pub cal_t: [Ex; 6],
    pub cal_r: [Ex; 6],
    pub m: Ex,
    pub m_tilde: Ex,
    pub n: Ex,
    pub n_tilde: Ex,
}

/// The 12 free functions of a spherically symmetric torsion-free connection
/// plus the evaluation domain. Torsion-freeness is structural: the
/// parametrization is already symmetric in the lower indices.
pub struct ConnectionProfile {
    k: [Ex; 12],
    kt: [Ex; 12],
    kr: [Ex; 12],
    pub domain: DomainRect,
    curv: CurvatureExprs,
    derived: DerivedExprs,
}

const T: usize = 0;
const R: usize = 1;

fn ks(k: &[Ex; 12], i: usize) -> Ex {
    k[i - 1].clone()
}

impl ConnectionProfile {
    pub fn new(k_exprs: [Expr; 12], domain: DomainRect) -> ConnectionProfile {
        let k: [Ex; 12] = k_exprs.map(Ex::new);
        let kt: [Ex; 12] = core::array::from_fn(|i| k[i].diff(T));
        let kr: [Ex; 12] = core::array::from_fn(|i| k[i].diff(R));
        let curv = build_curvature_exprs(&k, &kt, &kr);
        let derived = build_derived_exprs(&k, &curv);
        ConnectionProfile { k, kt, kr, domain, curv, derived }
    }

    /// 1-based accessor for the `k_i` expression.
    pub fn k_expr(&self, i: usize) -> &Expr {
        assert!((1..=12).contains(&i));
        self.k[i - 1].expr()
    }

    pub fn k_ex(&self, i: usize) -> &Ex {
        assert!((1..=12).contains(&i));
        &self.k[i - 1]
    }

    pub fn k_t_ex(&self, i: usize) -> &Ex {
        assert!((1..=12).contains(&i));
        &self.kt[i - 1]
    }

    pub fn k_r_ex(&self, i: usize) -> &Ex {
        assert!((1..=12).contains(&i));
        &self.kr[i - 1]
    }

    pub fn eval_k(&self, i: usize, t: f64, r: f64) -> Result<f64, ExprError> {
        self.k_ex(i).eval(&[t, r])
    }

    pub fn eval_k_all(&self, t: f64, r: f64) -> Result<[f64; 12], ExprError> {
        let mut out = [0.0; 12];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.k[i].eval(&[t, r])?;
        }
        Ok(out)
    }

    pub fn curvature_exprs(&self) -> &CurvatureExprs {
        &self.curv
    }

    pub fn derived_exprs(&self) -> &DerivedExprs {
        &self.derived
    }

    /// The full 16-entry nonlinear-connection table `N^a_b`, including the
    /// `k11`, `k12` entries and the sphere terms. Row index is the upper
    /// index, in the coordinate order `(t, r, theta, phi)`.
    pub fn nonlinear_matrix(&self, p: &SamplePoint) -> Result<[[f64; 4]; 4], ConnError> {
        let k = self.eval_k_all(p.t, p.r)?;
        let (k1, k2, k3, k4, k5, k6) = (k[0], k[1], k[2], k[3], k[4], k[5]);
        let (k7, k8, k9, k10, k11, k12) = (k[6], k[7], k[8], k[9], k[10], k[11]);
        let [td, rd, thd, phd] = p.vel;
        let s = p.theta.sin();
        let c = p.theta.cos();
        let cot = c / s;
        let mut n = [[0.0; 4]; 4];
        n[0][0] = k1 * td + k2 * rd;
        n[1][0] = k4 * td + k6 * rd;
        n[2][0] = k8 * thd - k11 * phd * s;
        n[3][0] = k11 / s * thd + k8 * phd;
        n[0][1] = k2 * td + k3 * rd;
        n[1][1] = k6 * td + k5 * rd;
        n[2][1] = k9 * thd - k12 * phd * s;
        n[3][1] = k12 / s * thd + k9 * phd;
        n[0][2] = k7 * thd;
        n[1][2] = k10 * thd;
        n[2][2] = k8 * td + k9 * rd;
        n[3][2] = (k11 * td + k12 * rd) / s + phd * cot;
        n[0][3] = k7 * phd * s * s;
        n[1][3] = k10 * phd * s * s;
        n[2][3] = (-k11 * td - k12 * rd - phd * c) * s;
        n[3][3] = k8 * td + k9 * rd + thd * cot;
        Ok(n)
    }

    pub fn curvature_table(&self, t: f64, r: f64) -> Result<CurvatureTable, ExprError> {
        let at = [t, r];
        let mut a = [0.0; 14];
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = self.curv.a[i].eval(&at)?;
        }
        let mut dbl_t = [0.0; 5];
        let mut dbl_r = [0.0; 5];
        for i in 0..5 {
            dbl_t[i] = self.curv.dbl_t[i].eval(&at)?;
            dbl_r[i] = self.curv.dbl_r[i].eval(&at)?;
        }
        Ok(CurvatureTable { a, dbl_t, dbl_r })
    }

    /// Scalar fields requiring `k10 != 0` at the point; a vanishing `k10`
    /// yields the mirrored-case signal.
    pub fn derived_coeffs(&self, t: f64, r: f64) -> Result<DerivedCoeffs, ConnError> {
        let k10 = self.eval_k(10, t, r)?;
        if k10 == 0.0 {
            return Err(ConnError::MirroredCase { t, r });
        }
        let at = [t, r];
        let d = &self.derived;
        let mut cap = [0.0; 6];
        let mut cal_t = [0.0; 6];
        let mut cal_r = [0.0; 6];
        for i in 0..6 {
            cap[i] = d.cap[i].eval(&at)?;
            cal_t[i] = d.cal_t[i].eval(&at)?;
            cal_r[i] = d.cal_r[i].eval(&at)?;
        }
        Ok(DerivedCoeffs {
            a: d.a.eval(&at)?,
            b: d.b.eval(&at)?,
            c: d.c.eval(&at)?,
            cap,
            cal_t,
            cal_r,
            m: d.m.eval(&at)?,
            m_tilde: d.m_tilde.eval(&at)?,
            n: d.n.eval(&at)?,
            n_tilde: d.n_tilde.eval(&at)?,
        })
    }

    /// The profile with the roles of `t` and `r` exchanged: indices permuted
    /// as the coordinate swap dictates, each expression's variables swapped,
    /// and the domain rectangle transposed. An involution.
    pub fn swap_roles(&self) -> ConnectionProfile {
        // (k1..k12) -> (k5, k6, k4, k3, k1, k2, k10, k9, k8, k7, k12, k11),
        // each composed with (t, r) -> (r, t).
        let perm = [5usize, 6, 4, 3, 1, 2, 10, 9, 8, 7, 12, 11];
        let k_new: [Expr; 12] =
            core::array::from_fn(|i| swap_vars(self.k_expr(perm[i])));
        ConnectionProfile::new(k_new, self.domain.transposed())
    }

    /// True when all of `k7..k10` are the literal zero expression; used for
    /// fast branch pre-selection (the classifier still performs numeric
    /// zero-tests).
    pub fn k_is_literal_zero(&self, i: usize) -> bool {
        self.k_ex(i).is_zero()
    }
}

fn swap_vars(e: &Expr) -> Expr {
    use std::sync::Arc;
    match e {
        Expr::Const(_) => e.clone(),
        Expr::Var(0, _) => Expr::Var(1, "r"),
        Expr::Var(1, _) => Expr::Var(0, "t"),
        Expr::Var(..) => e.clone(),
        Expr::Neg(a) => Expr::Neg(Arc::new(swap_vars(a))),
        Expr::Add(a, b) => Expr::Add(Arc::new(swap_vars(a)), Arc::new(swap_vars(b))),
        Expr::Sub(a, b) => Expr::Sub(Arc::new(swap_vars(a)), Arc::new(swap_vars(b))),
        Expr::Mul(a, b) => Expr::Mul(Arc::new(swap_vars(a)), Arc::new(swap_vars(b))),
        Expr::Div(a, b) => Expr::Div(Arc::new(swap_vars(a)), Arc::new(swap_vars(b))),
        Expr::Pow(a, b) => Expr::Pow(Arc::new(swap_vars(a)), Arc::new(swap_vars(b))),
        Expr::Call(f, a) => Expr::Call(*f, Arc::new(swap_vars(a))),
    }
}

fn build_curvature_exprs(k: &[Ex; 12], kt: &[Ex; 12], kr: &[Ex; 12]) -> CurvatureExprs {
    let kk = |i: usize| ks(k, i);
    let dt = |i: usize| kt[i - 1].clone();
    let dr = |i: usize| kr[i - 1].clone();

    let a1 = dr(1) - dt(2) + kk(3) * kk(4) - kk(2) * kk(6);
    let a2 = dr(2) - dt(3) + kk(2).sq() + kk(3) * kk(6) - kk(1) * kk(3) - kk(2) * kk(5);
    let a3 = dr(4) - dt(6) + kk(1) * kk(6) + kk(4) * kk(5) - kk(2) * kk(4) - kk(6).sq();
    let a4 = dr(6) - dt(5) + kk(2) * kk(6) - kk(3) * kk(4);
    let a5 = dr(8) - dt(9);
    let a6 = dt(7).neg() + kk(7) * kk(8) - kk(1) * kk(7) - kk(2) * kk(10);
    let a7 = dt(10).neg() + kk(8) * kk(10) - kk(4) * kk(7) - kk(6) * kk(10);
    let a8 = dt(8).neg() + kk(1) * kk(8) + kk(4) * kk(9) - kk(8).sq();
    let a9 = dt(9).neg() + kk(2) * kk(8) + kk(6) * kk(9) - kk(8) * kk(9);
    let a10 = dr(7).neg() + kk(7) * kk(9) - kk(2) * kk(7) - kk(3) * kk(10);
    let a11 = dr(10).neg() + kk(9) * kk(10) - kk(6) * kk(7) - kk(5) * kk(10);
    let a12 = dr(8).neg() + kk(2) * kk(8) + kk(6) * kk(9) - kk(8) * kk(9);
    let a13 = dr(9).neg() + kk(3) * kk(8) + kk(5) * kk(9) - kk(9).sq();
    let a14 = 1.0 + kk(7) * kk(8) + kk(9) * kk(10);
    let a = [a1, a2, a3, a4, a5, a6, a7, a8, a9, a10, a11, a12, a13, a14];

    let at = |i: usize| a[i - 1].diff(T);
    let ar = |i: usize| a[i - 1].diff(R);
    let av = |i: usize| a[i - 1].clone();

    let dbl_t = [
        at(1) + av(3) * kk(2) - av(2) * kk(4),
        at(2) + av(2) * kk(1) - av(1) * kk(2) + av(4) * kk(2) - av(2) * kk(6),
        at(3) - av(3) * kk(1) + av(1) * kk(4) - av(4) * kk(4) + av(3) * kk(6),
        at(4) + av(2) * kk(4) - av(3) * kk(2),
        at(5),
    ];
    let dbl_r = [
        ar(1) + av(3) * kk(3) - av(2) * kk(6),
        ar(2) + av(2) * kk(2) - av(1) * kk(3) + av(4) * kk(3) - av(2) * kk(5),
        ar(3) - av(3) * kk(2) + av(1) * kk(6) - av(4) * kk(6) + av(3) * kk(5),
        ar(4) + av(2) * kk(6) - av(3) * kk(3),
        ar(5),
    ];
    CurvatureExprs { a, dbl_t, dbl_r }
}

/// The capitals template applied to a bracket-coefficient vector `x1..x5`.
fn capitals(a: &Ex, b: &Ex, c: &Ex, x: &[Ex; 5]) -> [Ex; 6] {
    let ab_c = a * b + c;
    let two_ab_c = 2.0 * (a * b) + c;
    let ax3_x4 = a * &x[2] + &x[3];
    let ax1_x2 = a * &x[0] + &x[1];
    [
        b * &ax1_x2 + &ab_c * &ax3_x4 - &x[4] * &two_ab_c,
        a * &ax3_x4 - &ax1_x2,
        &ab_c * &x[2] + b * &ax3_x4 + b * &x[0] - 2.0 * (b * &x[4]),
        a * &x[2] - &x[0] + &x[4],
        b * &x[2],
        a * &x[2] - &x[0],
    ]
}

fn build_derived_exprs(k: &[Ex; 12], curv: &CurvatureExprs) -> DerivedExprs {
    let kk = |i: usize| ks(k, i);
    let k10 = kk(10);
    let a = kk(7) / &k10;
    let b = kk(8) / &k10;
    let c = (kk(9) * &k10 - kk(7) * kk(8)) / k10.sq();
    let cap = capitals(&a, &b, &c, &slice5(&curv.a));
    let cal_t = capitals(&a, &b, &c, &curv.dbl_t);
    let cal_r = capitals(&a, &b, &c, &curv.dbl_r);
    let m = 2.0 * (kk(1) - kk(4) * &a);
    let m_tilde = &m - 2.0 * kk(8);
    let n = 2.0 * (kk(2) - kk(6) * &a);
    let n_tilde = &n - 2.0 * kk(9);
    DerivedExprs {
        a_t: a.diff(T),
        a_r: a.diff(R),
        b_t: b.diff(T),
        b_r: b.diff(R),
        c_t: c.diff(T),
        c_r: c.diff(R),
        a,
        b,
        c,
        cap,
        cal_t,
        cal_r,
        m,
        m_tilde,
        n,
        n_tilde,
    }
}

fn slice5(a: &[Ex; 14]) -> [Ex; 5] {
    core::array::from_fn(|i| a[i].clone())
}

/// The invariants `u = dt - a dr` and `v = c dr^2 + 2 b dt dr - w^2` of the
/// `delta_w` characteristic system, plus `z = v / u^2` when `u` is usable.
#[derive(Clone, Copy, Debug)]
pub struct Uvz {
    pub u: f64,
    pub v: f64,
    /// `None` signals `u = 0` (z undefined).
    pub z: Option<f64>,
}

pub fn uvz(p: &SamplePoint, dc: &DerivedCoeffs) -> Uvz {
    let td = p.vel[0];
    let rd = p.vel[1];
    let w2 = p.w2();
    let u = td - dc.a * rd;
    let v = dc.c * rd * rd + 2.0 * dc.b * td * rd - w2;
    let z = (u != 0.0).then(|| v / (u * u));
    Uvz { u, v, z }
}
