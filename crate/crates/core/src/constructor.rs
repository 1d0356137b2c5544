//! Builders realizing each classification label as an evaluatable model:
//! the power-law and exponential families, the w-sector family, the
//! parallel-transport construction for bracket-flat connections, and the
//! one-variable family of the trivial-`delta_w` branch.
//!
//! Every constructed model carries a closed-form `(t, r)` derivative
//! channel, so the downstream residual sweeps measure the PDE defect of the
//! implemented function to near machine precision.

use crate::classifier::Label;
use crate::connection::{ConnError, ConnectionProfile};
use crate::exprlang::{parse_with_vars, subst, Ex, Expr, ExprError};
use crate::jets::VJet;
use crate::model::{
    velocity_jets, FinslerModel, GeomError, ModelCore, ModelInfo, SamplePoint,
};
use crate::quad::{Form, LineIntegral, QuadError};
use std::sync::Mutex;
use thiserror::Error;

/// Variables of the transported seed function.
pub const VARS_L0: [&str; 3] = ["dt", "dr", "dw"];
/// Variable of the one-argument free profile functions.
pub const VARS_Q: [&str; 1] = ["q"];
/// Variable of the flat-bracket seed free function.
pub const VARS_Z: [&str; 1] = ["z"];

/// Cone thresholds: `|u|` relative to the velocity norm, `|z + rho|`
/// absolute (both 0-homogeneous). The `z + rho` margin keeps the power-law
/// metric well conditioned: third spray derivatives amplify rounding near
/// the cone boundary.
const U_FRAC: f64 = 0.05;
const ZR_EPS: f64 = 0.1;
/// Cap on `|mu z|`: keeps the exponential model's dynamic range small
/// enough that third spray derivatives stay at rounding level.
const EXP_ARG_MAX: f64 = 4.0;
const W_FLOOR: f64 = 0.05;
/// Grid spread above which `lambda = F/D` is rejected as non-constant.
const LAMBDA_SPREAD_TOL: f64 = 1e-8;
/// Path-order disagreement above which transport reports a non-flat bracket.
const TRANSPORT_PATH_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ConstructError {
    #[error("label {0} is not constructible")]
    NotConstructible(Label),
    #[error("lambda = F/D has grid spread {spread:.3e}; not a constant, classification unsound")]
    LambdaNotConstant { spread: f64 },
    #[error("parallel-transport path orders disagree by {0:.3e}: bracket is not flat")]
    BracketNonFlat(f64),
    #[error("seed function violates the base-point w-equation (residual {0:.3e})")]
    IncompatibleSeed(f64),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Conn(#[from] ConnError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// User-selectable free functions and base points; every field has a
/// class-appropriate default.
#[derive(Clone, Debug, Default)]
pub struct FreeFunctions {
    /// One-argument profile `xi(q)` for the w-sector and one-variable
    /// classes.
    pub xi: Option<Expr>,
    /// One-argument seed `Xi(z)` for the flat-bracket transport class.
    pub big_xi: Option<Expr>,
    /// Seed `L0(dt, dr, dw)` for the two-variable free transport class.
    pub l0: Option<Expr>,
    /// Base point override (defaults to the domain center).
    pub base: Option<(f64, f64)>,
    /// Base value of `p = dr/dt` for the one-variable quadrature.
    pub p0: Option<f64>,
}

impl FreeFunctions {
    fn base(&self, pr: &ConnectionProfile) -> (f64, f64) {
        self.base.unwrap_or_else(|| pr.domain.center())
    }
}

/// Default free profile for the w-sector class (q < 0 on its cone).
pub fn default_xi_wsector() -> Expr {
    parse_with_vars("q + 1/q", &VARS_Q).unwrap()
}

/// Default free profile for the one-variable class: polynomial in q, so the
/// jet chains stay cancellation-exact, with a sign-definite metric
/// determinant across the q-band.
pub fn default_xi_onevar() -> Expr {
    parse_with_vars("q^2*(1+q)", &VARS_Q).unwrap()
}

pub fn default_big_xi() -> Expr {
    // Non-quadratic seed whose metric determinant is proportional to
    // (1 - z)^3 / (1 - 3z): nondegenerate on the whole z < 1/3 range, which
    // contains the full cone of c < 0 profiles. (exp(z), by contrast,
    // degenerates on the z = -1/2 and z = -1 hypersurfaces.)
    parse_with_vars("(1 - z)^2", &VARS_Z).unwrap()
}

pub fn default_l0() -> Expr {
    parse_with_vars("sqrt(dt^4 + dr^4 + dw^4)", &VARS_L0).unwrap()
}

/// Build the model realizing `label` for the profile. Mirrored labels
/// construct on the role-swapped profile and wrap the result in the
/// coordinate-exchange adapter.
pub fn construct(
    pr: &ConnectionProfile,
    label: &Label,
    free: &FreeFunctions,
) -> Result<FinslerModel, ConstructError> {
    match label {
        Label::T1Power => build_power(pr, free),
        Label::T1Exponential => build_exponential(pr, free),
        Label::T1WSector => {
            let xi = free.xi.clone().unwrap_or_else(default_xi_wsector);
            build_wsector(pr, &xi, free)
        }
        Label::T1FlatBracket => {
            let (t0, r0) = free.base(pr);
            let dc = pr.derived_coeffs(t0, r0)?;
            let invariants = (dc.a, dc.b, dc.c);
            let l0 = match &free.l0 {
                Some(l0) => l0.clone(),
                None => {
                    let big_xi = free.big_xi.clone().unwrap_or_else(default_big_xi);
                    l0_from_big_xi(&big_xi, dc.a, dc.b, dc.c)
                }
            };
            build_transport(pr, &l0, (t0, r0), Some(invariants))
        }
        Label::T2Free2d => {
            let l0 = free.l0.clone().unwrap_or_else(default_l0);
            build_transport(pr, &l0, free.base(pr), None)
        }
        Label::T2OneVar => {
            let xi = free.xi.clone().unwrap_or_else(default_xi_onevar);
            build_onevar(pr, &xi, free)
        }
        Label::Mirrored(inner) => {
            let swapped = pr.swap_roles();
            let inner_model = construct(&swapped, inner, free)?;
            Ok(FinslerModel::new(Box::new(MirroredModel { inner: inner_model })))
        }
        other => Err(ConstructError::NotConstructible(other.clone())),
    }
}

/// Scalar fields `a, b, c` and their coordinate derivatives, cloned out of
/// the profile's symbolic layer.
struct UvFields {
    a: Ex,
    b: Ex,
    c: Ex,
    a_t: Ex,
    a_r: Ex,
    b_t: Ex,
    b_r: Ex,
    c_t: Ex,
    c_r: Ex,
}

impl UvFields {
    fn from_profile(pr: &ConnectionProfile) -> UvFields {
        let d = pr.derived_exprs();
        UvFields {
            a: d.a.clone(),
            b: d.b.clone(),
            c: d.c.clone(),
            a_t: d.a_t.clone(),
            a_r: d.a_r.clone(),
            b_t: d.b_t.clone(),
            b_r: d.b_r.clone(),
            c_t: d.c_t.clone(),
            c_r: d.c_r.clone(),
        }
    }
}

/// Jets of the characteristic invariants `u`, `v`, `z = v/u^2` and their
/// coordinate derivatives at a sample point.
struct UvData {
    u: VJet,
    v: VJet,
    z: VJet,
    dt_u: VJet,
    dr_u: VJet,
    dt_v: VJet,
    dr_v: VJet,
    dt_z: VJet,
    dr_z: VJet,
}

fn uv_data(f: &UvFields, p: &SamplePoint, order: usize) -> Result<UvData, GeomError> {
    let at = [p.t, p.r];
    let a = f.a.eval(&at)?;
    let b = f.b.eval(&at)?;
    let c = f.c.eval(&at)?;
    let (a_t, a_r) = (f.a_t.eval(&at)?, f.a_r.eval(&at)?);
    let (b_t, b_r) = (f.b_t.eval(&at)?, f.b_r.eval(&at)?);
    let (c_t, c_r) = (f.c_t.eval(&at)?, f.c_r.eval(&at)?);
    let vj = velocity_jets(p, order);
    let vnorm = p.vel.iter().map(|v| v * v).sum::<f64>().sqrt();

    let u = &vj.td - &vj.rd.scale(a);
    if u.value().abs() < U_FRAC * vnorm {
        return Err(GeomError::Inadmissible(format!(
            "|u| = {:.3e} below the cone threshold",
            u.value().abs()
        )));
    }
    let rd2 = &vj.rd * &vj.rd;
    let td_rd = &vj.td * &vj.rd;
    // v = c rd^2 + 2 b td rd - w^2 (the delta_w invariant).
    let v = &(&rd2.scale(c) + &td_rd.scale(2.0 * b)) - &vj.w2;
    let u2 = &u * &u;
    let z = v.div(&u2)?;
    let dt_u = vj.rd.scale(-a_t);
    let dr_u = vj.rd.scale(-a_r);
    let dt_v = &rd2.scale(c_t) + &td_rd.scale(2.0 * b_t);
    let dr_v = &rd2.scale(c_r) + &td_rd.scale(2.0 * b_r);
    // dz = dv/u^2 - 2 z du/u
    let dt_z = &dt_v.div(&u2)? - &(&z * &dt_u).div(&u)?.scale(2.0);
    let dr_z = &dr_v.div(&u2)? - &(&z * &dr_u).div(&u)?.scale(2.0);
    Ok(UvData { u, v, z, dt_u, dr_u, dt_v, dr_v, dt_z, dr_z })
}

fn grid_stats(ex: &Ex, pts: &[(f64, f64)]) -> Result<(f64, f64), ExprError> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &(t, r) in pts {
        let v = ex.eval(&[t, r])?;
        min = min.min(v);
        max = max.max(v);
    }
    Ok((0.5 * (min + max), max - min))
}

// ---------------------------------------------------------------------
// Power-law class
// ---------------------------------------------------------------------

struct PowerModel {
    fields: UvFields,
    lambda: f64,
    lambda_spread: f64,
    rho: Ex,
    rho_t: Ex,
    rho_r: Ex,
    eq85_residual: f64,
    p_integrand: Ex,
    q_integrand: Ex,
    theta_int: LineIntegral,
}

pub fn build_power(
    pr: &ConnectionProfile,
    free: &FreeFunctions,
) -> Result<FinslerModel, ConstructError> {
    let d = pr.derived_exprs();
    let pts = pr.domain.grid(21, 21);
    let lambda_ex = &d.cap[5] / &d.cap[3]; // F / D
    let (lambda, spread) = grid_stats(&lambda_ex, &pts)?;
    if spread.abs() > LAMBDA_SPREAD_TOL * (1.0 + lambda.abs()) {
        return Err(ConstructError::LambdaNotConstant { spread });
    }
    let rho = &d.cap[4] / &d.cap[3]; // E / D (the proof-consistent ratio)
    let rho_t = rho.diff(0);
    let rho_r = rho.diff(1);
    // Diagnostic: the transport equation for rho,
    // d_t rho = 2 k4 b + Mtilde rho.
    let eq85 = &rho_t - (2.0 * (pr.k_ex(4) * &d.b) + &d.m_tilde * &rho);
    let mut eq85_residual = 0.0f64;
    for &(t, r) in &pts {
        eq85_residual = eq85_residual.max(eq85.eval(&[t, r])?.abs());
    }
    let p_integrand = &d.m - lambda * &d.m_tilde;
    let q_integrand = &d.n - lambda * &d.n_tilde;
    let theta_int = LineIntegral::new(
        Form::Exprs { p: p_integrand.clone(), q: q_integrand.clone() },
        free.base(pr),
        &pr.domain,
        1e-8,
    )?;
    Ok(FinslerModel::new(Box::new(PowerModel {
        fields: UvFields::from_profile(pr),
        lambda,
        lambda_spread: spread,
        rho,
        rho_t,
        rho_r,
        eq85_residual,
        p_integrand,
        q_integrand,
        theta_int,
    })))
}

impl PowerModel {
    /// `(L, u, z + rho)` jets plus the rho value.
    fn assemble(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Result<(VJet, UvData, VJet, f64), GeomError> {
        let uv = uv_data(&self.fields, p, order)?;
        let rho = self.rho.eval(&[p.t, p.r])?;
        let zr = uv.z.add_scalar(rho);
        if zr.value().abs() < ZR_EPS {
            return Err(GeomError::Inadmissible(format!(
                "|z + rho| = {:.3e} below the cone threshold",
                zr.value().abs()
            )));
        }
        let theta = self
            .theta_int
            .value(p.t, p.r)
            .map_err(|e| GeomError::Inadmissible(e.to_string()))?
            .exp();
        let zr_pow = zr.abs()?.powf(self.lambda)?;
        let l = (&(&uv.u * &uv.u) * &zr_pow).scale(theta);
        Ok((l, uv, zr, rho))
    }
}

impl ModelCore for PowerModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "T1-power",
            "L = theta(t,r) u^2 |z + rho|^lambda",
            format!("|u| >= {U_FRAC}|v|, |z + rho| >= {ZR_EPS}"),
        )
        .with_param("lambda", self.lambda)
        .with_param("lambda_spread", self.lambda_spread)
        .with_param("rho_transport_residual", self.eq85_residual)
        .with_param("theta_curl_residual", self.theta_int.curl_residual)
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        Ok(self.assemble(p, order)?.0)
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        Some((|| {
            let (l, uv, zr, _rho) = self.assemble(p, order)?;
            let at = [p.t, p.r];
            let dln_t = self.p_integrand.eval(&at)?;
            let dln_r = self.q_integrand.eval(&at)?;
            let rho_t = self.rho_t.eval(&at)?;
            let rho_r = self.rho_r.eval(&at)?;
            let lam = self.lambda;
            // d_t L = L (dln_theta + 2 du/u + lambda d(z+rho)/(z+rho))
            let dt_fac = &(&uv.dt_u.div(&uv.u)?.scale(2.0)
                + &uv.dt_z.add_scalar(rho_t).div(&zr)?.scale(lam))
                .add_scalar(dln_t);
            let dr_fac = &(&uv.dr_u.div(&uv.u)?.scale(2.0)
                + &uv.dr_z.add_scalar(rho_r).div(&zr)?.scale(lam))
                .add_scalar(dln_r);
            Ok((&l * dt_fac, &l * dr_fac))
        })())
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        p.w2() >= crate::model::W_MIN * crate::model::W_MIN
            && self.assemble(p, 0).is_ok()
    }
}

// ---------------------------------------------------------------------
// Exponential class
// ---------------------------------------------------------------------

struct ExponentialModel {
    fields: UvFields,
    mu: Ex,
    mu_t: Ex,
    mu_r: Ex,
    mu_center: f64,
    mu_spread: f64,
    eq87_residual: f64,
    p_integrand: Ex,
    q_integrand: Ex,
    phi_int: LineIntegral,
}

pub fn build_exponential(
    pr: &ConnectionProfile,
    free: &FreeFunctions,
) -> Result<FinslerModel, ConstructError> {
    let d = pr.derived_exprs();
    let pts = pr.domain.grid(21, 21);
    let mu = &d.cap[5] / &d.cap[4]; // F / E
    let (mu_center, mu_spread) = grid_stats(&mu, &pts)?;
    let mu_t = mu.diff(0);
    let mu_r = mu.diff(1);
    // Diagnostic: d_t ln mu = -Mtilde, i.e., mu_t + Mtilde mu = 0.
    let eq87 = &mu_t + &d.m_tilde * &mu;
    let mut eq87_residual = 0.0f64;
    for &(t, r) in &pts {
        eq87_residual = eq87_residual.max(eq87.eval(&[t, r])?.abs());
    }
    let p_integrand = &d.m + 2.0 * (pr.k_ex(4) * &d.b * &mu);
    let q_integrand = &d.n + 2.0 * (pr.k_ex(6) * &d.b * &mu);
    let phi_int = LineIntegral::new(
        Form::Exprs { p: p_integrand.clone(), q: q_integrand.clone() },
        free.base(pr),
        &pr.domain,
        1e-8,
    )?;
    Ok(FinslerModel::new(Box::new(ExponentialModel {
        fields: UvFields::from_profile(pr),
        mu,
        mu_t,
        mu_r,
        mu_center,
        mu_spread,
        eq87_residual,
        p_integrand,
        q_integrand,
        phi_int,
    })))
}

impl ExponentialModel {
    fn assemble(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Result<(VJet, UvData, f64), GeomError> {
        let uv = uv_data(&self.fields, p, order)?;
        let mu = self.mu.eval(&[p.t, p.r])?;
        if (mu * uv.z.value()).abs() > EXP_ARG_MAX {
            return Err(GeomError::Inadmissible(format!(
                "|mu z| = {:.3e} outside the exponential cone",
                (mu * uv.z.value()).abs()
            )));
        }
        let phi = self
            .phi_int
            .value(p.t, p.r)
            .map_err(|e| GeomError::Inadmissible(e.to_string()))?
            .exp();
        let l = (&(&uv.u * &uv.u) * &uv.z.scale(mu).exp()).scale(phi);
        Ok((l, uv, mu))
    }
}

impl ModelCore for ExponentialModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "T1-exponential",
            "L = phi(t,r) u^2 exp(mu z)",
            format!("|u| >= {U_FRAC}|v|, |mu z| <= {EXP_ARG_MAX}"),
        )
        .with_param("mu_center", self.mu_center)
        .with_param("mu_spread", self.mu_spread)
        .with_param("mu_transport_residual", self.eq87_residual)
        .with_param("phi_curl_residual", self.phi_int.curl_residual)
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        Ok(self.assemble(p, order)?.0)
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        Some((|| {
            let (l, uv, mu) = self.assemble(p, order)?;
            let at = [p.t, p.r];
            let mu_t = self.mu_t.eval(&at)?;
            let mu_r = self.mu_r.eval(&at)?;
            let dln_t = self.p_integrand.eval(&at)?;
            let dln_r = self.q_integrand.eval(&at)?;
            // d_t L = L (dln_phi + 2 du/u + mu_t z + mu dz)
            let dt_fac = &(&uv.dt_u.div(&uv.u)?.scale(2.0)
                + &(&uv.z.scale(mu_t) + &uv.dt_z.scale(mu)))
                .add_scalar(dln_t);
            let dr_fac = &(&uv.dr_u.div(&uv.u)?.scale(2.0)
                + &(&uv.z.scale(mu_r) + &uv.dr_z.scale(mu)))
                .add_scalar(dln_r);
            Ok((&l * dt_fac, &l * dr_fac))
        })())
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        p.w2() >= crate::model::W_MIN * crate::model::W_MIN
            && self.assemble(p, 0).is_ok()
    }
}

// ---------------------------------------------------------------------
// w-sector class
// ---------------------------------------------------------------------

struct WSectorModel {
    fields: UvFields,
    xi: Expr,
    xi_d: Expr,
    m: Ex,
    n: Ex,
    f_int: LineIntegral,
}

pub fn build_wsector(
    pr: &ConnectionProfile,
    xi: &Expr,
    free: &FreeFunctions,
) -> Result<FinslerModel, ConstructError> {
    let d = pr.derived_exprs();
    // The curl of (M, N) is -2F, which vanishes on this class.
    let f_int = LineIntegral::new(
        Form::Exprs { p: d.m.clone(), q: d.n.clone() },
        free.base(pr),
        &pr.domain,
        1e-8,
    )?;
    Ok(FinslerModel::new(Box::new(WSectorModel {
        fields: UvFields::from_profile(pr),
        xi: xi.clone(),
        xi_d: xi.diff(0),
        m: d.m.clone(),
        n: d.n.clone(),
        f_int,
    })))
}

impl WSectorModel {
    /// `(L, uv, q, xi'(q))` jets.
    fn assemble(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Result<(VJet, UvData, VJet, VJet), GeomError> {
        if p.w2() < W_FLOOR * W_FLOOR {
            return Err(GeomError::Inadmissible("w below the w-sector floor".into()));
        }
        let uv = uv_data(&self.fields, p, order)?;
        let vnorm2 = p.vel.iter().map(|v| v * v).sum::<f64>();
        if uv.v.value().abs() < 1e-4 * vnorm2 {
            return Err(GeomError::Inadmissible("|v| below the cone threshold".into()));
        }
        let f = self
            .f_int
            .value(p.t, p.r)
            .map_err(|e| GeomError::Inadmissible(e.to_string()))?;
        let q = uv.z.scale((-f).exp());
        let xi_q = self.xi.eval_jet(std::slice::from_ref(&q))?;
        let xi_d_q = self.xi_d.eval_jet(std::slice::from_ref(&q))?;
        // L = u^2 z xi(q) = v xi(q).
        let l = &uv.v * &xi_q;
        Ok((l, uv, q, xi_d_q))
    }
}

impl ModelCore for WSectorModel {
    fn info(&self) -> ModelInfo {
        // With b = c = 0 the solution depends on velocities only through
        // (u, w), so the direction dt = a, dr = 1 is a null direction of g:
        // the 4x4 metric has rank <= 3 for every choice of xi. Berwald
        // compatibility is certified by the first-order horizontal system;
        // the canonical spray is not defined for this class.
        ModelInfo::new(
            "T1-wsector",
            format!(
                "L = v xi(q), q = z exp(-f), xi = {} (structurally rank-deficient metric)",
                self.xi
            ),
            format!("|u| >= {U_FRAC}|v|, w >= {W_FLOOR}"),
        )
        .with_param("f_curl_residual", self.f_int.curl_residual)
        .with_param("metric_rank_deficient", 1.0)
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        Ok(self.assemble(p, order)?.0)
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        Some((|| {
            let (_l, uv, q, xi_d_q) = self.assemble(p, order)?;
            let at = [p.t, p.r];
            let m = self.m.eval(&at)?;
            let n = self.n.eval(&at)?;
            let xi_q = self.xi.eval_jet(std::slice::from_ref(&q))?;
            // dq = q (dv/v - 2 du/u - d f), with d_t f = M, d_r f = N.
            let dt_q = &q
                * &(&uv.dt_v.div(&uv.v)? - &uv.dt_u.div(&uv.u)?.scale(2.0)).add_scalar(-m);
            let dr_q = &q
                * &(&uv.dr_v.div(&uv.v)? - &uv.dr_u.div(&uv.u)?.scale(2.0)).add_scalar(-n);
            // d L = dv xi(q) + v xi'(q) dq
            let dt_l = &(&uv.dt_v * &xi_q) + &(&(&uv.v * &xi_d_q) * &dt_q);
            let dr_l = &(&uv.dr_v * &xi_q) + &(&(&uv.v * &xi_d_q) * &dr_q);
            Ok((dt_l, dr_l))
        })())
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        self.assemble(p, 0).is_ok()
    }
}

// ---------------------------------------------------------------------
// Parallel-transport construction (flat-bracket and two-variable free)
// ---------------------------------------------------------------------

type Mat3 = [[f64; 3]; 3];

fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat3_axpy(a: &mut Mat3, s: f64, b: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] += s * b[i][j];
        }
    }
}

fn mat3_max_diff(a: &Mat3, b: &Mat3) -> f64 {
    let mut m = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

const MAT3_ID: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Seed for the flat-bracket class: `L0 = u0^2 Xi(z0)` with the invariants
/// frozen at the base point, so the base-point `w`-equation holds exactly.
pub fn l0_from_big_xi(big_xi: &Expr, a0: f64, b0: f64, c0: f64) -> Expr {
    let dt = Ex::var(0, "dt");
    let dr = Ex::var(1, "dr");
    let dw = Ex::var(2, "dw");
    let u0 = &dt - a0 * &dr;
    let v0 = &(c0 * dr.sq() + 2.0 * b0 * (&dt * &dr)) - dw.sq();
    let z0 = &v0 / u0.sq();
    let xi_sub = subst(big_xi, &[z0.expr().clone()]);
    (u0.sq() * Ex::new(xi_sub)).expr().clone()
}

struct TransportModel {
    l0: Expr,
    dl0: [Expr; 3],
    base: (f64, f64),
    /// Entries of the reduced connection blocks as expressions of (t, r):
    /// rows/cols over (dt, dr) plus the scalar action on w.
    at_entries: [[Ex; 3]; 3],
    ar_entries: [[Ex; 3]; 3],
    /// Cone restriction on the transported velocities: `(a0, b0, c0)` of
    /// the frozen base invariants when the seed carries the u-structure of
    /// the flat-bracket class; keeps `|u0|` and `|z0|` in a well-conditioned
    /// range.
    base_invariants: Option<(f64, f64, f64)>,
    path_discrepancy: f64,
    base_dw_residual: f64,
    cache: Mutex<std::collections::HashMap<(u64, u64), Mat3>>,
}

const TRANSPORT_Z_MAX: f64 = 25.0;

fn reduced_blocks(pr: &ConnectionProfile) -> ([[Ex; 3]; 3], [[Ex; 3]; 3]) {
    let k = |i: usize| pr.k_ex(i).clone();
    let z = Ex::konst(0.0);
    let at = [
        [k(1), k(2), z.clone()],
        [k(4), k(6), z.clone()],
        [z.clone(), z.clone(), k(8)],
    ];
    let ar = [
        [k(2), k(3), z.clone()],
        [k(6), k(5), z.clone()],
        [z.clone(), z.clone(), k(9)],
    ];
    (at, ar)
}

fn eval_mat3(entries: &[[Ex; 3]; 3], t: f64, r: f64) -> Result<Mat3, ExprError> {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = entries[i][j].eval(&[t, r])?;
        }
    }
    Ok(out)
}

/// Integrate `dP/ds = P A(s)` from `s0` to `s1` with classic RK4 and
/// step-doubling until the result is stable to the transport target.
fn rk4_leg(
    p0: Mat3,
    a_of: &dyn Fn(f64) -> Result<Mat3, ExprError>,
    s0: f64,
    s1: f64,
) -> Result<Mat3, GeomError> {
    if s0 == s1 {
        return Ok(p0);
    }
    let run = |n: usize| -> Result<Mat3, GeomError> {
        let h = (s1 - s0) / n as f64;
        let mut p = p0;
        let mut s = s0;
        for _ in 0..n {
            let a1 = a_of(s)?;
            let a2 = a_of(s + 0.5 * h)?;
            let a4 = a_of(s + h)?;
            let k1 = mat3_mul(&p, &a1);
            let mut p2 = p;
            mat3_axpy(&mut p2, 0.5 * h, &k1);
            let k2 = mat3_mul(&p2, &a2);
            let mut p3 = p;
            mat3_axpy(&mut p3, 0.5 * h, &k2);
            let k3 = mat3_mul(&p3, &a2);
            let mut p4 = p;
            mat3_axpy(&mut p4, h, &k3);
            let k4 = mat3_mul(&p4, &a4);
            mat3_axpy(&mut p, h / 6.0, &k1);
            mat3_axpy(&mut p, h / 3.0, &k2);
            mat3_axpy(&mut p, h / 3.0, &k3);
            mat3_axpy(&mut p, h / 6.0, &k4);
            s += h;
        }
        Ok(p)
    };
    let mut n = 16usize;
    let mut prev = run(n)?;
    while n <= 1 << 14 {
        n *= 2;
        let next = run(n)?;
        if mat3_max_diff(&prev, &next) <= 1e-10 {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

impl TransportModel {
    fn transport_t_then_r(&self, t: f64, r: f64) -> Result<Mat3, GeomError> {
        let (t0, r0) = self.base;
        let p1 = rk4_leg(MAT3_ID, &|s| eval_mat3(&self.at_entries, s, r0), t0, t)?;
        rk4_leg(p1, &|s| eval_mat3(&self.ar_entries, t, s), r0, r)
    }

    fn transport_r_then_t(&self, t: f64, r: f64) -> Result<Mat3, GeomError> {
        let (t0, r0) = self.base;
        let p1 = rk4_leg(MAT3_ID, &|s| eval_mat3(&self.ar_entries, t0, s), r0, r)?;
        rk4_leg(p1, &|s| eval_mat3(&self.at_entries, s, r), t0, t)
    }

    fn transport(&self, t: f64, r: f64) -> Result<Mat3, GeomError> {
        let key = (t.to_bits(), r.to_bits());
        if let Some(p) = self.cache.lock().unwrap().get(&key) {
            return Ok(*p);
        }
        let p = self.transport_t_then_r(t, r)?;
        self.cache.lock().unwrap().insert(key, p);
        Ok(p)
    }

    /// Transported velocity jets `P (td, rd, w)`.
    fn transported_jets(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Result<([VJet; 3], [VJet; 3], Mat3), GeomError> {
        let mat = self.transport(p.t, p.r)?;
        let vj = velocity_jets(p, order);
        let w = vj.w_or_err()?.clone();
        let y = [vj.td, vj.rd, w];
        let ty: [VJet; 3] = core::array::from_fn(|i| {
            let mut acc = y[0].scale(mat[i][0]);
            acc = &acc + &y[1].scale(mat[i][1]);
            &acc + &y[2].scale(mat[i][2])
        });
        Ok((ty, y, mat))
    }
}

impl ModelCore for TransportModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "transport",
            format!("L = L0(P(t,r) (dt, dr, w)), L0 = {}", self.l0),
            format!("w >= {}", crate::model::W_MIN),
        )
        .with_param("path_discrepancy", self.path_discrepancy)
        .with_param("base_dw_residual", self.base_dw_residual)
        .with_param("base_t", self.base.0)
        .with_param("base_r", self.base.1)
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        let (ty, _, _) = self.transported_jets(p, order)?;
        if let Some((a0, b0, c0)) = self.base_invariants {
            let y = [ty[0].value(), ty[1].value(), ty[2].value()];
            let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
            let u0 = y[0] - a0 * y[1];
            let v0 = c0 * y[1] * y[1] + 2.0 * b0 * y[0] * y[1] - y[2] * y[2];
            if u0.abs() < U_FRAC * norm || v0.abs() > TRANSPORT_Z_MAX * u0 * u0 {
                return Err(GeomError::Inadmissible(
                    "transported velocity outside the flat-bracket cone".into(),
                ));
            }
        }
        let l = self.l0.eval_jet(&ty)?;
        if !l.all_finite() {
            return Err(GeomError::Inadmissible(
                "seed evaluation left the finite range".into(),
            ));
        }
        Ok(l)
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        Some((|| {
            let (ty, y, mat) = self.transported_jets(p, order)?;
            let grads: [VJet; 3] =
                core::array::from_fn(|j| self.dl0[j].eval_jet(&ty).unwrap_or_else(|_| {
                    VJet::constant(f64::NAN, order)
                }));
            for g in &grads {
                if !g.all_finite() {
                    return Err(GeomError::Inadmissible(
                        "seed gradient evaluation failed".into(),
                    ));
                }
            }
            let at = eval_mat3(&self.at_entries, p.t, p.r)?;
            let ar = eval_mat3(&self.ar_entries, p.t, p.r)?;
            let bt = mat3_mul(&mat, &at);
            let br = mat3_mul(&mat, &ar);
            let contract = |b: &Mat3| -> VJet {
                let mut acc = VJet::constant(0.0, order);
                for j in 0..3 {
                    let mut by = y[0].scale(b[j][0]);
                    by = &by + &y[1].scale(b[j][1]);
                    by = &by + &y[2].scale(b[j][2]);
                    acc = &acc + &(&grads[j] * &by);
                }
                acc
            };
            Ok((contract(&bt), contract(&br)))
        })())
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        // Order-1 probe: catches seeds whose derivative coefficients blow
        // up even where the value itself stays finite (e.g. exp of a large
        // negative ratio).
        p.w2() >= crate::model::W_MIN * crate::model::W_MIN
            && self.eval_jet(p, 1).is_ok()
    }
}

/// Transport construction for bracket-flat profiles. Verifies path-order
/// consistency of the transport (firing on non-flat brackets) and, when the
/// `delta_w` operator is nontrivial, that the seed satisfies the base-point
/// `w`-equation.
pub fn build_transport(
    pr: &ConnectionProfile,
    l0: &Expr,
    base: (f64, f64),
    base_invariants: Option<(f64, f64, f64)>,
) -> Result<FinslerModel, ConstructError> {
    let (at_entries, ar_entries) = reduced_blocks(pr);
    let dl0 = [l0.diff(0), l0.diff(1), l0.diff(2)];
    let model = TransportModel {
        l0: l0.clone(),
        dl0,
        base,
        at_entries,
        ar_entries,
        base_invariants,
        path_discrepancy: 0.0,
        base_dw_residual: 0.0,
        cache: Mutex::new(std::collections::HashMap::new()),
    };

    // Path-order consistency probes across the domain.
    let dom = &pr.domain;
    let probes = [
        (dom.t_min + 0.05 * (dom.t_max - dom.t_min), dom.r_min + 0.05 * (dom.r_max - dom.r_min)),
        (dom.t_max - 0.05 * (dom.t_max - dom.t_min), dom.r_min + 0.05 * (dom.r_max - dom.r_min)),
        (dom.t_min + 0.05 * (dom.t_max - dom.t_min), dom.r_max - 0.05 * (dom.r_max - dom.r_min)),
        (dom.t_max - 0.05 * (dom.t_max - dom.t_min), dom.r_max - 0.05 * (dom.r_max - dom.r_min)),
    ];
    let mut discrepancy = 0.0f64;
    for &(t, r) in &probes {
        let p1 = model.transport_t_then_r(t, r)?;
        let p2 = model.transport_r_then_t(t, r)?;
        discrepancy = discrepancy.max(mat3_max_diff(&p1, &p2));
    }
    if discrepancy > TRANSPORT_PATH_TOL {
        return Err(ConstructError::BracketNonFlat(discrepancy));
    }

    // Base-point w-equation for the seed: w k7 d1 + w k10 d2 + (k8 dt + k9 dr) d3 = 0.
    let (t0, r0) = base;
    let k = pr.eval_k_all(t0, r0)?;
    let mut dw_res = 0.0f64;
    if k[6] != 0.0 || k[7] != 0.0 || k[8] != 0.0 || k[9] != 0.0 {
        let probes_v = [[1.0, 0.3, 0.7], [0.6, -0.9, 1.2], [-1.1, 0.5, 0.9]];
        for y in probes_v {
            let vars = y.to_vec();
            let d1 = model.dl0[0].eval(&vars)?;
            let d2 = model.dl0[1].eval(&vars)?;
            let d3 = model.dl0[2].eval(&vars)?;
            let w = y[2];
            let res = w * k[6] * d1 + w * k[9] * d2 + (k[7] * y[0] + k[8] * y[1]) * d3;
            let scale = 1.0 + d1.abs().max(d2.abs()).max(d3.abs());
            dw_res = dw_res.max(res.abs() / scale);
        }
        if dw_res > 1e-6 {
            return Err(ConstructError::IncompatibleSeed(dw_res));
        }
    }

    Ok(FinslerModel::new(Box::new(TransportModel {
        path_discrepancy: discrepancy,
        base_dw_residual: dw_res,
        ..model
    })))
}

// ---------------------------------------------------------------------
// One-variable class (trivial delta_w, nonvanishing bracket)
// ---------------------------------------------------------------------

struct OneVarModel {
    /// a1..a4 and their t/r derivatives, as functions of (t, r).
    a: [Ex; 4],
    a_t: [Ex; 4],
    a_r: [Ex; 4],
    k: [Ex; 6],
    xi: Expr,
    xi_d: Expr,
    p0: f64,
    phi_int: LineIntegral,
    kk_spread: f64,
    tt_spread: f64,
}

#[derive(Clone, Copy)]
struct RatCoeffs {
    a1: f64,
    a2: f64,
    a3: f64,
    a4: f64,
}

impl RatCoeffs {
    fn den(&self, p: f64) -> f64 {
        self.a2 * p * p - (self.a4 - self.a1) * p - self.a3
    }

    fn num(&self, p: f64) -> f64 {
        self.a1 + self.a2 * p
    }

    /// Minimum |den| on [lo, hi]: endpoints plus the vertex of the quadratic.
    fn min_abs_den(&self, lo: f64, hi: f64) -> f64 {
        let mut m = self.den(lo).abs().min(self.den(hi).abs());
        if self.a2 != 0.0 {
            let v = (self.a4 - self.a1) / (2.0 * self.a2);
            if v > lo && v < hi {
                m = m.min(self.den(v).abs());
            }
        }
        m
    }
}

impl OneVarModel {
    fn coeffs(&self, t: f64, r: f64) -> Result<RatCoeffs, ExprError> {
        let at = [t, r];
        Ok(RatCoeffs {
            a1: self.a[0].eval(&at)?,
            a2: self.a[1].eval(&at)?,
            a3: self.a[2].eval(&at)?,
            a4: self.a[3].eval(&at)?,
        })
    }

    fn coeffs_d(&self, t: f64, r: f64, in_t: bool) -> Result<RatCoeffs, ExprError> {
        let at = [t, r];
        let d = if in_t { &self.a_t } else { &self.a_r };
        Ok(RatCoeffs {
            a1: d[0].eval(&at)?,
            a2: d[1].eval(&at)?,
            a3: d[2].eval(&at)?,
            a4: d[3].eval(&at)?,
        })
    }

    /// Quadrature of the rational integrand from p0 to p.
    fn i_value(&self, c: &RatCoeffs, p: f64) -> Result<f64, GeomError> {
        let (lo, hi) = (self.p0.min(p), self.p0.max(p));
        if c.min_abs_den(lo, hi) < 1e-6 {
            return Err(GeomError::Inadmissible(
                "denominator root inside the p-quadrature range".into(),
            ));
        }
        crate::quad::integrate(|s| Ok(c.num(s) / c.den(s)), self.p0, p, 1e-11)
            .map_err(|e| GeomError::Inadmissible(e.to_string()))
    }

    /// `d_t I` (or `d_r I`) at fixed p: differentiation under the integral.
    fn i_coord_derivative(
        &self,
        c: &RatCoeffs,
        cd: &RatCoeffs,
        p: f64,
    ) -> Result<f64, GeomError> {
        crate::quad::integrate(
            |s| {
                let den = c.den(s);
                let den_d = cd.a2 * s * s - (cd.a4 - cd.a1) * s - cd.a3;
                Ok(cd.num(s) / den - c.num(s) * den_d / (den * den))
            },
            self.p0,
            p,
            1e-11,
        )
        .map_err(|e| GeomError::Inadmissible(e.to_string()))
    }

    /// Jet of a p-antiderivative: scalar composition from the value and the
    /// derivatives of the integrand with respect to p.
    fn antiderivative_jet(
        base_value: f64,
        integrand_of_p: impl Fn(&VJet) -> Result<VJet, GeomError>,
        p_jet: &VJet,
    ) -> Result<VJet, GeomError> {
        let order = p_jet.order();
        let mut derivs = vec![base_value];
        if order >= 1 {
            let seed = VJet::seed_unchecked([p_jet.value(), 0.0, 0.0, 0.0], order - 1);
            let f_jet = integrand_of_p(&seed[0])?;
            for k in 0..order {
                let mut alpha = [0u8; 4];
                alpha[0] = k as u8;
                derivs.push(f_jet.partial(alpha).map_err(GeomError::from)?);
            }
        }
        Ok(p_jet.compose_scalar(&derivs))
    }

    /// `K(t, r)` evaluated at probe `p` (p-independent on gate-passing
    /// profiles; the spread over p is recorded at build).
    fn k_at(&self, t: f64, r: f64, p: f64) -> Result<f64, GeomError> {
        let c = self.coeffs(t, r)?;
        let cd = self.coeffs_d(t, r, true)?;
        let kv: Vec<f64> = self
            .k
            .iter()
            .map(|e| e.eval(&[t, r]))
            .collect::<Result<_, _>>()?;
        let dt_i = self.i_coord_derivative(&c, &cd, p)?;
        let dp_i = c.num(p) / c.den(p);
        Ok(dt_i - (kv[0] + kv[1] * p) + (kv[0] * p + kv[1] * p * p - kv[3] - kv[5] * p) * dp_i)
    }

    /// `T(t, r)` evaluated at probe `p`; the last bracket carries the
    /// `- k5 p` term of the mirrored structure of the t-equation.
    fn t_at(&self, t: f64, r: f64, p: f64) -> Result<f64, GeomError> {
        let c = self.coeffs(t, r)?;
        let cd = self.coeffs_d(t, r, false)?;
        let kv: Vec<f64> = self
            .k
            .iter()
            .map(|e| e.eval(&[t, r]))
            .collect::<Result<_, _>>()?;
        let dr_i = self.i_coord_derivative(&c, &cd, p)?;
        let dp_i = c.num(p) / c.den(p);
        Ok(dr_i - (kv[1] + kv[2] * p) + (kv[1] * p + kv[2] * p * p - kv[5] - kv[4] * p) * dp_i)
    }

    fn assemble(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Result<(VJet, VJet, VJet, VJet), GeomError> {
        let vnorm = p.vel.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Relative floor: the 1/w chain in q amplifies rounding like
        // (vnorm/w)^order.
        if p.w2() < 0.04 * vnorm * vnorm {
            return Err(GeomError::Inadmissible("w below the one-variable floor".into()));
        }
        // The p = dr/dt jet chain amplifies rounding like (vnorm/dt)^order;
        // the 0.3 floor keeps order-5 spray derivatives at noise level.
        if p.vel[0] < 0.3 * vnorm {
            return Err(GeomError::Inadmissible(
                "dt velocity outside the one-variable cone".into(),
            ));
        }
        let vj = velocity_jets(p, order);
        let w = vj.w_or_err()?.clone();
        let p_jet = vj.rd.div(&vj.td)?;
        let c = self.coeffs(p.t, p.r)?;
        let i_base = self.i_value(&c, p_jet.value())?;
        let i_jet = Self::antiderivative_jet(
            i_base,
            |pj| {
                let num = pj.scale(c.a2).add_scalar(c.a1);
                let den = &(&(pj * pj).scale(c.a2) - &pj.scale(c.a4 - c.a1)).add_scalar(-c.a3);
                num.div(den).map_err(GeomError::from)
            },
            &p_jet,
        )?;
        let phi = self
            .phi_int
            .value(p.t, p.r)
            .map_err(|e| GeomError::Inadmissible(e.to_string()))?;
        let q = (&vj.td * &i_jet.add_scalar(-phi).exp()).div(&w)?;
        // Keep q in a conditioned band: jets of the free function amplify
        // rounding like q^-k outside it (q is 0-homogeneous, so the band is
        // scale-invariant).
        if !(0.2..=10.0).contains(&q.value()) {
            return Err(GeomError::Inadmissible(format!(
                "q = {:.3e} outside the conditioned band [0.2, 10]",
                q.value()
            )));
        }
        let xi_q = self.xi.eval_jet(std::slice::from_ref(&q))?;
        let l = &vj.w2 * &xi_q;
        Ok((l, q, p_jet, vj.w2.clone()))
    }
}

impl ModelCore for OneVarModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "T2-onevar",
            format!("L = w^2 xi(q), q = dt exp(I - phi)/w, xi = {}", self.xi),
            format!("dt > 0, w >= {W_FLOOR}, p-range clear of denominator roots"),
        )
        .with_param("p0", self.p0)
        .with_param("K_p_spread", self.kk_spread)
        .with_param("T_p_spread", self.tt_spread)
        .with_param("phi_curl_residual", self.phi_int.curl_residual)
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        Ok(self.assemble(p, order)?.0)
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        Some((|| {
            let (_l, q, p_jet, w2) = self.assemble(p, order)?;
            let c = self.coeffs(p.t, p.r)?;
            let cd_t = self.coeffs_d(p.t, p.r, true)?;
            let cd_r = self.coeffs_d(p.t, p.r, false)?;
            let dt_i_base = self.i_coord_derivative(&c, &cd_t, p_jet.value())?;
            let dr_i_base = self.i_coord_derivative(&c, &cd_r, p_jet.value())?;
            let integrand_d = |cd: RatCoeffs| {
                move |pj: &VJet| -> Result<VJet, GeomError> {
                    let den = &(&(pj * pj).scale(c.a2) - &pj.scale(c.a4 - c.a1))
                        .add_scalar(-c.a3);
                    let den_d = &(&(pj * pj).scale(cd.a2) - &pj.scale(cd.a4 - cd.a1))
                        .add_scalar(-cd.a3);
                    let num = pj.scale(c.a2).add_scalar(c.a1);
                    let num_d = pj.scale(cd.a2).add_scalar(cd.a1);
                    let term1 = num_d.div(den)?;
                    let term2 = (&num * den_d).div(&(den * den))?;
                    Ok(&term1 - &term2)
                }
            };
            let dt_i = Self::antiderivative_jet(dt_i_base, integrand_d(cd_t), &p_jet)?;
            let dr_i = Self::antiderivative_jet(dr_i_base, integrand_d(cd_r), &p_jet)?;
            let kk = self.k_at(p.t, p.r, self.p0)?;
            let tt = self.t_at(p.t, p.r, self.p0)?;
            let xi_d_q = self.xi_d.eval_jet(std::slice::from_ref(&q))?;
            // d_t L = w^2 xi'(q) q (d_t I - K)
            let dt_l = &(&w2 * &xi_d_q) * &(&q * &dt_i.add_scalar(-kk));
            let dr_l = &(&w2 * &xi_d_q) * &(&q * &dr_i.add_scalar(-tt));
            Ok((dt_l, dr_l))
        })())
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        self.assemble(p, 0).is_ok()
    }
}

pub fn build_onevar(
    pr: &ConnectionProfile,
    xi: &Expr,
    free: &FreeFunctions,
) -> Result<FinslerModel, ConstructError> {
    let cv = pr.curvature_exprs();
    let a: [Ex; 4] = core::array::from_fn(|i| cv.a[i].clone());
    let a_t: [Ex; 4] = core::array::from_fn(|i| a[i].diff(0));
    let a_r: [Ex; 4] = core::array::from_fn(|i| a[i].diff(1));
    let k: [Ex; 6] = core::array::from_fn(|i| pr.k_ex(i + 1).clone());
    let p0 = free.p0.unwrap_or(1.0);
    let mut model = OneVarModel {
        a,
        a_t,
        a_r,
        k: k.clone(),
        xi: xi.clone(),
        xi_d: xi.diff(0),
        p0,
        // placeholder; replaced below once K and T closures exist
        phi_int: LineIntegral::new(
            Form::Exprs { p: Ex::konst(0.0), q: Ex::konst(0.0) },
            free.base(pr),
            &pr.domain,
            1.0,
        )?,
        kk_spread: 0.0,
        tt_spread: 0.0,
    };

    // K and T are p-independent on gate-passing profiles; record the spread
    // over p probes as a diagnostic.
    let probes_p = [0.6 * p0, 0.8 * p0, p0, 1.2 * p0, 1.4 * p0];
    let mut kk_spread = 0.0f64;
    let mut tt_spread = 0.0f64;
    for (t, r) in pr.domain.grid(5, 5) {
        let mut kmin = f64::INFINITY;
        let mut kmax = f64::NEG_INFINITY;
        let mut tmin = f64::INFINITY;
        let mut tmax = f64::NEG_INFINITY;
        for &p in &probes_p {
            let kv = model
                .k_at(t, r, p)
                .map_err(ConstructError::Geom)?;
            let tv = model.t_at(t, r, p).map_err(ConstructError::Geom)?;
            kmin = kmin.min(kv);
            kmax = kmax.max(kv);
            tmin = tmin.min(tv);
            tmax = tmax.max(tv);
        }
        kk_spread = kk_spread.max(kmax - kmin);
        tt_spread = tt_spread.max(tmax - tmin);
    }
    model.kk_spread = kk_spread;
    model.tt_spread = tt_spread;

    // Potential phi from the closures K, T (evaluated at the base p, where
    // the quadrature term of d_t I vanishes); the finite-difference curl
    // check signals violations of the minor conditions.
    let shared = std::sync::Arc::new(OneVarScalars {
        a: model.a.clone(),
        a_t: model.a_t.clone(),
        a_r: model.a_r.clone(),
        k,
        p0,
    });
    let sk = shared.clone();
    let st = shared.clone();
    let phi_int = LineIntegral::new(
        Form::Fns {
            p: Box::new(move |t, r| {
                sk.k_value(t, r).map_err(|e| QuadError::Integrand(e.to_string()))
            }),
            q: Box::new(move |t, r| {
                st.t_value(t, r).map_err(|e| QuadError::Integrand(e.to_string()))
            }),
        },
        free.base(pr),
        &pr.domain,
        1e-6,
    )?;
    model.phi_int = phi_int;
    Ok(FinslerModel::new(Box::new(model)))
}

/// The scalar data needed to evaluate K and T at the base p without the
/// quadrature term (it vanishes at p = p0).
struct OneVarScalars {
    a: [Ex; 4],
    a_t: [Ex; 4],
    a_r: [Ex; 4],
    k: [Ex; 6],
    p0: f64,
}

impl OneVarScalars {
    fn k_value(&self, t: f64, r: f64) -> Result<f64, ExprError> {
        let at = [t, r];
        let a1 = self.a[0].eval(&at)?;
        let a2 = self.a[1].eval(&at)?;
        let a3 = self.a[2].eval(&at)?;
        let a4 = self.a[3].eval(&at)?;
        let _ = (self.a_t[0].expr(), self.a_r[0].expr());
        let p = self.p0;
        let den = a2 * p * p - (a4 - a1) * p - a3;
        let dp_i = (a1 + a2 * p) / den;
        let k1 = self.k[0].eval(&at)?;
        let k2 = self.k[1].eval(&at)?;
        let k4 = self.k[3].eval(&at)?;
        let k6 = self.k[5].eval(&at)?;
        Ok(-(k1 + k2 * p) + (k1 * p + k2 * p * p - k4 - k6 * p) * dp_i)
    }

    fn t_value(&self, t: f64, r: f64) -> Result<f64, ExprError> {
        let at = [t, r];
        let a1 = self.a[0].eval(&at)?;
        let a2 = self.a[1].eval(&at)?;
        let a3 = self.a[2].eval(&at)?;
        let a4 = self.a[3].eval(&at)?;
        let p = self.p0;
        let den = a2 * p * p - (a4 - a1) * p - a3;
        let dp_i = (a1 + a2 * p) / den;
        let k2 = self.k[1].eval(&at)?;
        let k3 = self.k[2].eval(&at)?;
        let k5 = self.k[4].eval(&at)?;
        let k6 = self.k[5].eval(&at)?;
        Ok(-(k2 + k3 * p) + (k2 * p + k3 * p * p - k6 - k5 * p) * dp_i)
    }
}

// ---------------------------------------------------------------------
// Mirrored adapter
// ---------------------------------------------------------------------

struct MirroredModel {
    inner: FinslerModel,
}

impl MirroredModel {
    fn swap_point(p: &SamplePoint) -> Result<SamplePoint, GeomError> {
        SamplePoint::new(
            p.r,
            p.t,
            p.theta,
            p.phi,
            [p.vel[1], p.vel[0], p.vel[2], p.vel[3]],
        )
    }
}

impl ModelCore for MirroredModel {
    fn info(&self) -> ModelInfo {
        let mut info = self.inner.info();
        info.class = format!("mirrored({})", info.class);
        info.description = format!("t-r role swap of: {}", info.description);
        info
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        let q = Self::swap_point(p)?;
        Ok(self.inner.eval_jet(&q, order)?.swap_slots01())
    }

    fn x_jets(&self, p: &SamplePoint, order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        let q = match Self::swap_point(p) {
            Ok(q) => q,
            Err(e) => return Some(Err(e)),
        };
        let (dt, dr) = match self.inner.x_jets_analytic(&q, order)? {
            Ok(pair) => pair,
            Err(e) => return Some(Err(e)),
        };
        // The inner model's t is the outer r and vice versa.
        Some(Ok((dr.swap_slots01(), dt.swap_slots01())))
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        match Self::swap_point(p) {
            Ok(q) => self.inner.admissible(&q),
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify, ClassifySettings};
    use crate::corpus;
    use crate::geom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn build_for(pr: &ConnectionProfile) -> FinslerModel {
        let label = classify(pr, &ClassifySettings::default()).unwrap().label;
        construct(pr, &label, &FreeFunctions::default()).unwrap()
    }

    fn sample_admissible(
        pr: &ConnectionProfile,
        m: &FinslerModel,
        rng: &mut ChaCha8Rng,
    ) -> SamplePoint {
        for _ in 0..20_000 {
            let (t, r) = pr.domain.sample(rng);
            let p = SamplePoint::new(
                t,
                r.max(1e-3),
                rng.gen_range(0.4..2.7),
                rng.gen_range(0.0..6.2),
                core::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
            );
            let Ok(p) = p else { continue };
            if p.vel.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1 {
                continue;
            }
            if m.admissible(&p) {
                return p;
            }
        }
        panic!("no admissible sample found");
    }

    fn max_residual(pr: &ConnectionProfile, m: &FinslerModel, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max = 0.0f64;
        for _ in 0..n {
            let p = sample_admissible(pr, m, &mut rng);
            let res = geom::horizontal_residuals(m, pr, &p).unwrap();
            let l = m.eval_jet(&p, 1).unwrap();
            let ldot: [f64; 4] = core::array::from_fn(|c| {
                let mut alpha = [0u8; 4];
                alpha[c] = 1;
                l.partial(alpha).unwrap()
            });
            let vnorm = p.vel.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dnorm = ldot.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = 1.0 + l.value().abs() + vnorm * dnorm;
            for v in res {
                max = max.max(v.abs() / scale);
            }
        }
        max
    }

    #[test]
    fn power_model_satisfies_berwald_conditions() {
        let pr = corpus::power_profile();
        let m = build_for(&pr);
        let info = m.info();
        assert_eq!(info.class, "T1-power");
        let lambda = info.params.iter().find(|p| p.name == "lambda").unwrap().value;
        approx(lambda, 3.0, 1e-9);
        let spread = info
            .params
            .iter()
            .find(|p| p.name == "lambda_spread")
            .unwrap()
            .value;
        assert!(spread.abs() < 1e-10);
        assert!(max_residual(&pr, &m, 60, 1) < 1e-7);
        // Nondegenerate metric for this exponent.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = sample_admissible(&pr, &m, &mut rng);
        let (_, det) = geom::metric(&m, &p).unwrap();
        assert!(det.abs() > 1e-10, "det g = {det}");
    }

    #[test]
    fn power_model_homogeneity_and_euler() {
        let pr = corpus::power_profile();
        let m = build_for(&pr);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_admissible(&pr, &m, &mut rng);
        assert!(geom::euler_residual(&m, &p).unwrap() < 1e-11);
        let l0 = m.value(&p).unwrap();
        let l2 = m.value(&p.scaled(2.0)).unwrap();
        approx(l2, 4.0 * l0, 1e-10 * (1.0 + l0.abs()) * 4.0);
    }

    #[test]
    fn exponential_model_satisfies_berwald_conditions() {
        let pr = corpus::exponential_profile();
        let m = build_for(&pr);
        let info = m.info();
        assert_eq!(info.class, "T1-exponential");
        // mu = -1/q with q = k4 = 1.
        let mu = info.params.iter().find(|p| p.name == "mu_center").unwrap().value;
        approx(mu, -1.0, 1e-10);
        let eq87 = info
            .params
            .iter()
            .find(|p| p.name == "mu_transport_residual")
            .unwrap()
            .value;
        assert!(eq87 < 1e-8);
        assert!(max_residual(&pr, &m, 60, 2) < 1e-7);
    }

    #[test]
    fn wsector_model_satisfies_berwald_conditions() {
        let pr = corpus::wsector_profile();
        let m = build_for(&pr);
        assert_eq!(m.info().class, "T1-wsector");
        assert!(max_residual(&pr, &m, 60, 3) < 1e-7);
        // The class has the structural null direction (a, 1, 0, 0): the
        // full metric is rank-deficient for every xi, while the reduced
        // (u, thd, phd) block stays nondegenerate for the default xi.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = sample_admissible(&pr, &m, &mut rng);
        let (g, det) = geom::metric(&m, &p).unwrap();
        assert!(det.abs() < 1e-10, "det g = {det} should vanish structurally");
        let minor = g[0][0] * (g[2][2] * g[3][3] - g[2][3] * g[3][2])
            - g[0][2] * (g[2][0] * g[3][3] - g[2][3] * g[3][0])
            + g[0][3] * (g[2][0] * g[3][2] - g[2][2] * g[3][0]);
        assert!(minor.abs() > 1e-10, "reduced block minor = {minor}");
        assert!(m
            .info()
            .params
            .iter()
            .any(|p| p.name == "metric_rank_deficient"));
    }

    #[test]
    fn wsector_constant_xi_gives_fully_degenerate_l() {
        // xi(q) = const makes L proportional to w^2: on top of the
        // structural null direction, the whole (dt, dr) block collapses.
        let pr = corpus::wsector_profile();
        let xi = parse_with_vars("1", &VARS_Q).unwrap();
        let m = build_wsector(&pr, &xi, &FreeFunctions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_admissible(&pr, &m, &mut rng);
        let (g, det) = geom::metric(&m, &p).unwrap();
        assert!(det.abs() < 1e-12, "det g = {det} should vanish");
        for a in 0..2 {
            for b in 0..2 {
                assert!(g[a][b].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn wsector_f_vanishes_when_m_n_zero() {
        // k7 = k10 = 1, everything else zero: a = 1, b = c = 0, M = N = 0,
        // so f = 0 and L is (t, r)-independent.
        let mut k: [Expr; 12] = core::array::from_fn(|_| Expr::Const(0.0));
        k[6] = Expr::Const(1.0);
        k[9] = Expr::Const(1.0);
        let pr = ConnectionProfile::new(
            k,
            crate::connection::DomainRect::new(-1.0, 1.0, 1.0, 2.0).unwrap(),
        );
        let label = classify(&pr, &ClassifySettings::default()).unwrap().label;
        assert_eq!(label, Label::T1WSector);
        let m = construct(&pr, &label, &FreeFunctions::default()).unwrap();
        let p1 = SamplePoint::new(-0.5, 1.2, 1.1, 0.0, [1.0, 0.3, 0.8, 0.2]).unwrap();
        let p2 = SamplePoint::new(0.7, 1.9, 1.1, 0.0, [1.0, 0.3, 0.8, 0.2]).unwrap();
        approx(m.value(&p1).unwrap(), m.value(&p2).unwrap(), 1e-12);
    }

    #[test]
    fn transport_zero_profile_is_identity() {
        let pr = corpus::zero();
        let m = build_for(&pr);
        let quartic = corpus::quartic_model();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let p = sample_admissible(&pr, &m, &mut rng);
            approx(
                m.value(&p).unwrap(),
                quartic.value(&p).unwrap(),
                1e-12 * (1.0 + quartic.value(&p).unwrap().abs()),
            );
        }
        assert!(max_residual(&pr, &m, 40, 17) < 1e-10);
    }

    #[test]
    fn transport_minkowski_recovers_quadratic_model() {
        let pr = corpus::minkowski();
        let (t0, r0) = pr.domain.center();
        // Xi(z) = 1 + r0^2 z reproduces dt^2 - dr^2 - r^2 w^2 exactly.
        let big_xi_src = format!("1 + {}*z", r0 * r0);
        let free = FreeFunctions {
            big_xi: Some(parse_with_vars(&big_xi_src, &VARS_Z).unwrap()),
            ..Default::default()
        };
        let m = construct(&pr, &Label::T1FlatBracket, &free).unwrap();
        let reference = corpus::minkowski_model();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let p = sample_admissible(&pr, &m, &mut rng);
            let got = m.value(&p).unwrap();
            let want = reference.value(&p).unwrap();
            approx(got, want, 1e-8 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn transport_flatbracket_default_seed_passes() {
        let pr = corpus::minkowski();
        let m = build_for(&pr);
        assert!(max_residual(&pr, &m, 60, 29) < 1e-7);
        let disc = m
            .info()
            .params
            .iter()
            .find(|p| p.name == "path_discrepancy")
            .unwrap()
            .value;
        assert!(disc < 1e-9);
    }

    #[test]
    fn transport_free2d_with_nonzero_k1() {
        let pr = corpus::free2d_k1();
        let m = build_for(&pr);
        assert!(max_residual(&pr, &m, 40, 31) < 1e-9);
        // P = diag(exp(t - t0), 1, 1): L = L0(exp(dt) td, rd, w).
        let (t0, _) = pr.domain.center();
        let p = SamplePoint::new(t0 + 0.4, 1.5, 1.2, 0.0, [1.0, 0.5, 0.6, 0.3]).unwrap();
        let l0 = corpus::quartic_model();
        let mut q = p;
        q.vel[0] *= (0.4f64).exp();
        approx(
            m.value(&p).unwrap(),
            l0.value(&q).unwrap(),
            1e-9 * (1.0 + m.value(&p).unwrap().abs()),
        );
    }

    #[test]
    fn transport_detects_nonflat_bracket() {
        let pr = corpus::bracket_nonflat();
        let res = build_transport(&pr, &default_l0(), pr.domain.center(), None);
        match res {
            Err(ConstructError::BracketNonFlat(d)) => assert!(d > 1e-7),
            other => panic!("expected bracket detection, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn onevar_model_satisfies_berwald_conditions() {
        let pr = corpus::onevar_profile();
        let m = build_for(&pr);
        let info = m.info();
        assert_eq!(info.class, "T2-onevar");
        let kk = info.params.iter().find(|p| p.name == "K_p_spread").unwrap().value;
        let tt = info.params.iter().find(|p| p.name == "T_p_spread").unwrap().value;
        assert!(kk < 1e-7, "K spread {kk}");
        assert!(tt < 1e-7, "T spread {tt}");
        assert!(max_residual(&pr, &m, 60, 37) < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = sample_admissible(&pr, &m, &mut rng);
        let (_, det) = geom::metric(&m, &p).unwrap();
        assert!(det.abs() > 1e-12, "det g = {det}");
    }

    #[test]
    fn onevar_quadratic_xi_euler() {
        // xi(q) = q^2 gives L = dt^2 exp(2(I - phi)): still exactly
        // 2-homogeneous.
        let pr = corpus::onevar_profile();
        let xi = parse_with_vars("q^2", &VARS_Q).unwrap();
        let m = build_onevar(&pr, &xi, &FreeFunctions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let p = sample_admissible(&pr, &m, &mut rng);
        assert!(geom::euler_residual(&m, &p).unwrap() < 1e-10);
    }

    #[test]
    fn mirrored_model_matches_swapped_evaluation() {
        let pr = corpus::mirrored_minkowski();
        let label = classify(&pr, &ClassifySettings::default()).unwrap().label;
        assert_eq!(label, Label::Mirrored(Box::new(Label::T1FlatBracket)));
        let m = construct(&pr, &label, &FreeFunctions::default()).unwrap();
        assert!(m.info().class.starts_with("mirrored("));
        assert!(max_residual(&pr, &m, 40, 47) < 1e-7);
    }

    #[test]
    fn construct_rejects_non_constructible() {
        let pr = corpus::schwarzschild();
        let err = construct(&pr, &Label::RiemannianOnly, &FreeFunctions::default());
        assert!(matches!(err, Err(ConstructError::NotConstructible(_))));
    }
}
