//! Evaluatable pseudo-Finsler functions.
//!
//! A [`FinslerModel`] wraps a [`ModelCore`] that can evaluate `L` on
//! jet-valued velocity arguments at a sample point and, for constructed
//! models, supply closed-form coordinate derivatives. Ad-hoc models supplied
//! as expressions fall back to finite differences for the `(t, r)`
//! derivative channel.

use crate::exprlang::{Expr, ExprError};
use crate::jets::{JetError, VJet};
use serde::Serialize;
use thiserror::Error;

/// Floor on `w` below which velocity-space derivative operators relying on
/// the `w`-chain rule are refused (the `w = 0` stratum is excluded from
/// default sampling).
pub const W_MIN: f64 = 1e-3;

/// Variables of a `w`-symmetric ad-hoc model expression.
pub const VARS_SYM: [&str; 5] = ["t", "r", "dt", "dr", "dw"];
/// Variables of a direct (non-symmetric) model expression.
pub const VARS_DIRECT: [&str; 7] = ["t", "r", "th", "dt", "dr", "dth", "dph"];

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid sample point: {0}")]
    InvalidPoint(String),
    #[error("inadmissible sample point: {0}")]
    Inadmissible(String),
    #[error("singular metric at sample point")]
    SingularMetric,
    #[error("sample too close to a coordinate pole (|sin theta| < 1e-6)")]
    PoleProximity,
    #[error("model has no (t,r)-derivative channel and finite differences are disabled")]
    MissingChannel,
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A point of the (chart-restricted) tangent bundle: spherical coordinates
/// plus the four velocity components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplePoint {
    pub t: f64,
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    /// Velocities in the order (t, r, theta, phi).
    pub vel: [f64; 4],
}

impl SamplePoint {
    pub fn new(
        t: f64,
        r: f64,
        theta: f64,
        phi: f64,
        vel: [f64; 4],
    ) -> Result<SamplePoint, GeomError> {
        if r.is_nan() || r <= 0.0 {
            return Err(GeomError::InvalidPoint(format!("r = {r} must be positive")));
        }
        if !(theta > 0.0 && theta < std::f64::consts::PI) {
            return Err(GeomError::InvalidPoint(format!(
                "theta = {theta} outside (0, pi)"
            )));
        }
        if vel.iter().all(|&v| v == 0.0) {
            return Err(GeomError::InvalidPoint("zero velocity vector".into()));
        }
        if [t, r, theta, phi].iter().chain(vel.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidPoint("non-finite coordinate".into()));
        }
        Ok(SamplePoint { t, r, theta, phi, vel })
    }

    pub fn w2(&self) -> f64 {
        let s = self.theta.sin();
        self.vel[2] * self.vel[2] + s * s * self.vel[3] * self.vel[3]
    }

    pub fn w(&self) -> f64 {
        self.w2().sqrt()
    }

    /// The same point with velocities scaled by `sigma`.
    pub fn scaled(&self, sigma: f64) -> SamplePoint {
        let mut p = *self;
        for v in &mut p.vel {
            *v *= sigma;
        }
        p
    }
}

/// Velocity seed jets at a sample point, together with the derived `w` jets.
pub struct VelocityJets {
    pub td: VJet,
    pub rd: VJet,
    pub thd: VJet,
    pub phd: VJet,
    /// `w^2 = thd^2 + sin^2(theta) phd^2` (smooth everywhere).
    pub w2: VJet,
    /// `w = sqrt(w2)`; `None` when the base value is too small for jet
    /// arithmetic at positive order.
    pub w: Option<VJet>,
    pub theta: f64,
    pub order: usize,
}

pub fn velocity_jets(p: &SamplePoint, order: usize) -> VelocityJets {
    let seeds = VJet::seed_unchecked(p.vel, order);
    let [td, rd, thd, phd] = seeds;
    let s = p.theta.sin();
    let w2 = &(&thd * &thd) + &(&phd * &phd).scale(s * s);
    let w = if order == 0 {
        let v = w2.value();
        (v >= 0.0).then(|| VJet::constant(v.sqrt(), 0))
    } else if w2.value() >= W_MIN * W_MIN {
        w2.sqrt().ok()
    } else {
        None
    };
    VelocityJets { td, rd, thd, phd, w2, w, theta: p.theta, order }
}

impl VelocityJets {
    pub fn w_or_err(&self) -> Result<&VJet, GeomError> {
        self.w.as_ref().ok_or_else(|| {
            GeomError::Inadmissible(format!(
                "w = {:.3e} below the w-chain floor {W_MIN}",
                self.w2.value().max(0.0).sqrt()
            ))
        })
    }
}

#[derive(Serialize, Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: f64,
}

/// Serializable summary of a model (class tag, scalars, cone description).
#[derive(Serialize, Clone, Debug)]
pub struct ModelInfo {
    pub class: String,
    pub description: String,
    pub params: Vec<Param>,
    pub cone: String,
}

impl ModelInfo {
    pub fn new(class: &str, description: impl Into<String>, cone: impl Into<String>) -> Self {
        ModelInfo {
            class: class.to_string(),
            description: description.into(),
            params: Vec::new(),
            cone: cone.into(),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.push(Param { name: name.to_string(), value });
        self
    }
}

/// Core evaluation interface implemented by every model class.
pub trait ModelCore: Send + Sync {
    fn info(&self) -> ModelInfo;

    /// Jet of `L` in the four velocity slots at `p`.
    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError>;

    /// Closed-form `(d L/dt, d L/dr)` jets; `None` requests the
    /// finite-difference fallback.
    fn x_jets(&self, _p: &SamplePoint, _order: usize) -> Option<Result<(VJet, VJet), GeomError>> {
        None
    }

    /// Whether the model depends on velocities through `(dt, dr, w)` only.
    fn w_symmetric(&self) -> bool {
        true
    }

    /// Admissible-cone predicate (cheap geometric conditions only; callers
    /// additionally treat evaluation domain errors as inadmissible).
    fn admissible(&self, p: &SamplePoint) -> bool;
}

/// An evaluatable pseudo-Finsler function with its class tag.
pub struct FinslerModel {
    core: Box<dyn ModelCore>,
}

impl FinslerModel {
    pub fn new(core: Box<dyn ModelCore>) -> FinslerModel {
        FinslerModel { core }
    }

    pub fn info(&self) -> ModelInfo {
        self.core.info()
    }

    pub fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        if order > crate::jets::MAX_ORDER {
            return Err(GeomError::Jet(JetError::OrderOutOfRange(order)));
        }
        self.core.eval_jet(p, order)
    }

    pub fn value(&self, p: &SamplePoint) -> Result<f64, GeomError> {
        Ok(self.core.eval_jet(p, 0)?.value())
    }

    pub fn x_jets_analytic(
        &self,
        p: &SamplePoint,
        order: usize,
    ) -> Option<Result<(VJet, VJet), GeomError>> {
        self.core.x_jets(p, order)
    }

    pub fn w_symmetric(&self) -> bool {
        self.core.w_symmetric()
    }

    pub fn admissible(&self, p: &SamplePoint) -> bool {
        p.r > 0.0
            && p.theta > 0.0
            && p.theta < std::f64::consts::PI
            && self.core.admissible(p)
    }
}

/// Ad-hoc `w`-symmetric model given as an expression in `(t, r, dt, dr, dw)`.
/// Coordinate derivatives go through the finite-difference fallback.
pub struct ExprSymmetricModel {
    name: String,
    expr: Expr,
    w_floor: f64,
}

impl ExprSymmetricModel {
    pub fn new(name: &str, expr: Expr) -> ExprSymmetricModel {
        ExprSymmetricModel { name: name.to_string(), expr, w_floor: W_MIN }
    }

    pub fn into_model(self) -> FinslerModel {
        FinslerModel::new(Box::new(self))
    }
}

impl ModelCore for ExprSymmetricModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "adhoc",
            format!("L = {} ({})", self.expr, self.name),
            format!("w >= {}", self.w_floor),
        )
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        let vj = velocity_jets(p, order);
        let w = vj.w_or_err()?.clone();
        let vars = [
            VJet::constant(p.t, order),
            VJet::constant(p.r, order),
            vj.td,
            vj.rd,
            w,
        ];
        Ok(self.expr.eval_jet(&vars)?)
    }

    fn admissible(&self, p: &SamplePoint) -> bool {
        p.w2() >= self.w_floor * self.w_floor
    }
}

/// Direct model in all four velocity components (no `w`-symmetry assumed);
/// used for symmetry-violation controls.
pub struct DirectModel {
    name: String,
    expr: Expr,
}

impl DirectModel {
    pub fn new(name: &str, expr: Expr) -> DirectModel {
        DirectModel { name: name.to_string(), expr }
    }

    pub fn into_model(self) -> FinslerModel {
        FinslerModel::new(Box::new(self))
    }
}

impl ModelCore for DirectModel {
    fn info(&self) -> ModelInfo {
        ModelInfo::new(
            "adhoc-direct",
            format!("L = {} ({})", self.expr, self.name),
            "full velocity space",
        )
    }

    fn eval_jet(&self, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
        let vj = velocity_jets(p, order);
        let vars = [
            VJet::constant(p.t, order),
            VJet::constant(p.r, order),
            VJet::constant(p.theta, order),
            vj.td,
            vj.rd,
            vj.thd,
            vj.phd,
        ];
        Ok(self.expr.eval_jet(&vars)?)
    }

    fn w_symmetric(&self) -> bool {
        false
    }

    fn admissible(&self, _p: &SamplePoint) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse_with_vars;

    #[test]
    fn sample_point_validation() {
        assert!(SamplePoint::new(0.0, 1.0, 1.0, 0.0, [1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(SamplePoint::new(0.0, -1.0, 1.0, 0.0, [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(SamplePoint::new(0.0, 1.0, 0.0, 0.0, [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(SamplePoint::new(0.0, 1.0, 1.0, 0.0, [0.0; 4]).is_err());
    }

    #[test]
    fn w_combines_theta_and_phi_velocities() {
        let p = SamplePoint::new(
            0.0,
            2.0,
            std::f64::consts::FRAC_PI_2,
            0.0,
            [1.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        assert!((p.w() - 1.0).abs() < 1e-15);
        let p = SamplePoint::new(0.0, 2.0, std::f64::consts::FRAC_PI_6, 0.0, [0.0, 0.0, 0.0, 2.0])
            .unwrap();
        assert!((p.w() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minkowski_expr_model_values() {
        let expr = parse_with_vars("dt^2 - dr^2 - r^2*dw^2", &VARS_SYM).unwrap();
        let m = ExprSymmetricModel::new("minkowski", expr).into_model();
        let p = SamplePoint::new(
            0.0,
            2.0,
            std::f64::consts::FRAC_PI_2,
            0.3,
            [1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        // L = 1 - 0 - 4*1 = -3 at these velocities.
        assert!((m.value(&p).unwrap() + 3.0).abs() < 1e-14);
    }
}
