//! End-to-end numerical verification of a (model, profile) pair: residual
//! sweeps over random admissible samples, geodesic integration with
//! conservation checks, and nondegeneracy audits.

use crate::connection::ConnectionProfile;
use crate::geom;
use crate::model::{FinslerModel, GeomError, SamplePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug)]
pub struct SweepSettings {
    pub samples: usize,
    pub seed: u64,
    /// Residual tolerance for the analytic-channel checks.
    pub tol_residual: f64,
    /// Half-width of the velocity sampling box.
    pub velocity_box: f64,
    /// Velocity vectors shorter than this are rejected
    /// (homogeneity-redundant).
    pub min_speed: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            samples: 200,
            seed: 42,
            tol_residual: 1e-7,
            velocity_box: 2.0,
            min_speed: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub residual: f64,
    pub point: SamplePoint,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
    /// False when the check cannot be evaluated for this model class
    /// (e.g. the spray-based Berwald norm on a rank-deficient metric);
    /// such checks do not gate the overall verdict.
    pub applicable: bool,
    pub note: Option<String>,
    pub witnesses: Vec<Witness>,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            max_residual: 0.0,
            tolerance,
            samples: 0,
            pass: true,
            applicable: true,
            note: None,
            witnesses: Vec::new(),
        }
    }

    fn record(&mut self, residual: f64, point: &SamplePoint) {
        self.samples += 1;
        if residual > self.max_residual {
            self.max_residual = residual;
        }
        if residual > self.tolerance {
            self.pass = false;
            self.witnesses.push(Witness { residual, point: *point });
            self.witnesses.sort_by(|a, b| b.residual.partial_cmp(&a.residual).unwrap());
            self.witnesses.truncate(10);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub samples_requested: usize,
    pub samples_accepted: usize,
    pub acceptance_rate: f64,
    /// Set when the admissible cone accepted < 1% of the drawn samples
    /// (reported, not fatal).
    pub low_acceptance: bool,
    pub evaluation_errors: usize,
    pub seed: u64,
    pub overall_pass: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Max residual over the applicable checks.
    pub fn max_residual(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.applicable)
            .map(|c| c.max_residual)
            .fold(0.0, f64::max)
    }
}

/// Draw a sample from the domain rectangle times the velocity box,
/// rejecting against validity and the model cone.
fn draw_sample(
    rng: &mut ChaCha8Rng,
    pr: &ConnectionProfile,
    settings: &SweepSettings,
) -> Option<SamplePoint> {
    let (t, r) = pr.domain.sample(rng);
    let theta = rng.gen_range(0.3..std::f64::consts::PI - 0.3);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let b = settings.velocity_box;
    let vel: [f64; 4] = core::array::from_fn(|_| rng.gen_range(-b..b));
    if vel.iter().map(|v| v * v).sum::<f64>().sqrt() < settings.min_speed {
        return None;
    }
    SamplePoint::new(t, r, theta, phi, vel).ok()
}

/// Residual scale normalization making the tolerances dimensionless:
/// `1 + |L| + |xdot| |dL/dxdot|`.
fn residual_scale(m: &FinslerModel, p: &SamplePoint) -> Result<f64, GeomError> {
    let l = m.eval_jet(p, 1)?;
    let ldot: [f64; 4] = core::array::from_fn(|c| {
        let mut alpha = [0u8; 4];
        alpha[c] = 1;
        l.partial(alpha).unwrap()
    });
    let vnorm = p.vel.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dnorm = ldot.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(1.0 + l.value().abs() + vnorm * dnorm)
}

/// Sweep the Berwald-condition residuals, homogeneity and rotation
/// residuals, and the Berwald-curvature norm over random admissible
/// samples.
pub fn residual_sweep(
    m: &FinslerModel,
    pr: &ConnectionProfile,
    settings: &SweepSettings,
) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let tol = settings.tol_residual;
    let mut checks = vec![
        CheckResult::new("delta_t", tol),
        CheckResult::new("delta_r", tol),
        CheckResult::new("delta_theta", tol),
        CheckResult::new("delta_phi", tol),
        CheckResult::new("euler", tol),
        CheckResult::new("so3_1", tol),
        CheckResult::new("so3_2", tol),
        CheckResult::new("so3_3", tol),
        CheckResult::new("berwald_norm", tol),
    ];
    let mut accepted = 0usize;
    let mut tried = 0usize;
    let mut errors = 0usize;
    let mut singular = 0usize;
    let max_tries = settings.samples.saturating_mul(500).max(10_000);

    while accepted < settings.samples && tried < max_tries {
        tried += 1;
        let Some(p) = draw_sample(&mut rng, pr, settings) else { continue };
        if !m.admissible(&p) {
            continue;
        }
        let outcome = (|| -> Result<(), GeomError> {
            let scale = residual_scale(m, &p)?;
            let hres = geom::horizontal_residuals(m, pr, &p)?;
            for (i, v) in hres.iter().enumerate() {
                checks[i].record(v.abs() / scale, &p);
            }
            checks[4].record(geom::euler_residual(m, &p)? / scale, &p);
            let so3 = geom::so3_residuals(m, &p)?;
            for (i, v) in so3.iter().enumerate() {
                checks[5 + i].record(v / scale, &p);
            }
            // The curvature norm gets the same dimensionless normalization
            // as the other residuals.
            match geom::berwald_curvature_norm(m, &p) {
                Ok(v) => checks[8].record(v / scale, &p),
                Err(GeomError::SingularMetric) => singular += 1,
                Err(e) => return Err(e),
            }
            Ok(())
        })();
        match outcome {
            Ok(()) => accepted += 1,
            Err(_) => errors += 1,
        }
    }

    if accepted > 0 && singular == accepted {
        // The metric is singular at every accepted sample: the canonical
        // spray does not exist and the first-order system already certifies
        // Berwald compatibility.
        checks[8].applicable = false;
        checks[8].pass = true;
        checks[8].note =
            Some("not applicable: metric singular on the admissible cone".into());
    } else if singular > 0 {
        checks[8].note = Some(format!("metric singular at {singular} samples"));
    }

    let acceptance_rate = if tried == 0 { 0.0 } else { accepted as f64 / tried as f64 };
    let overall_pass = accepted >= settings.samples.min(1)
        && checks.iter().all(|c| !c.applicable || c.pass);
    VerificationReport {
        checks,
        samples_requested: settings.samples,
        samples_accepted: accepted,
        acceptance_rate,
        low_acceptance: acceptance_rate < 0.01,
        evaluation_errors: errors,
        seed: settings.seed,
        overall_pass,
    }
}

/// Nondegeneracy audit: min |det g| over random admissible samples.
pub fn det_audit(
    m: &FinslerModel,
    pr: &ConnectionProfile,
    settings: &SweepSettings,
) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x00d_e7a);
    let mut min = f64::INFINITY;
    let mut n = 0usize;
    let mut tried = 0usize;
    while n < settings.samples && tried < settings.samples * 500 {
        tried += 1;
        let Some(p) = draw_sample(&mut rng, pr, settings) else { continue };
        if !m.admissible(&p) {
            continue;
        }
        if let Ok((_, det)) = geom::metric(m, &p) {
            min = min.min(det.abs());
            n += 1;
        }
    }
    (min, n)
}

// ---------------------------------------------------------------------
// Geodesic integration
// ---------------------------------------------------------------------

/// What drives the geodesic equation: the profile's affine connection
/// (`xddot = -N^a_b(x, xdot) xdot^b`) or the model's spray
/// (`xddot = -2 G^a`).
pub enum Dynamics<'a> {
    Profile(&'a ConnectionProfile),
    Model(&'a FinslerModel),
}

#[derive(Clone, Copy, Debug)]
pub struct GeodesicOptions {
    pub h: f64,
    pub steps: usize,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { h: 1e-3, steps: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Termination {
    Completed,
    RadiusNonPositive { step: usize },
    PoleProximity { step: usize },
    StateExploded { step: usize },
    DynamicsFailure { step: usize, reason: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub states: Vec<SamplePoint>,
    pub h: f64,
    pub termination: Termination,
}

type State8 = [f64; 8];

fn pack(p: &SamplePoint) -> State8 {
    [p.t, p.r, p.theta, p.phi, p.vel[0], p.vel[1], p.vel[2], p.vel[3]]
}

fn unpack(s: &State8) -> Result<SamplePoint, GeomError> {
    SamplePoint::new(s[0], s[1], s[2], s[3], [s[4], s[5], s[6], s[7]])
}

fn derivative(dyn_: &Dynamics, s: &State8) -> Result<State8, GeomError> {
    let p = unpack(s)?;
    let acc: [f64; 4] = match dyn_ {
        Dynamics::Profile(pr) => {
            let n = pr.nonlinear_matrix(&p).map_err(|e| match e {
                crate::connection::ConnError::Expr(e) => GeomError::Expr(e),
                other => GeomError::Inadmissible(other.to_string()),
            })?;
            core::array::from_fn(|a| -(0..4).map(|b| n[a][b] * p.vel[b]).sum::<f64>())
        }
        Dynamics::Model(m) => {
            let g = geom::spray(m, &p)?;
            core::array::from_fn(|a| -2.0 * g[a])
        }
    };
    Ok([s[4], s[5], s[6], s[7], acc[0], acc[1], acc[2], acc[3]])
}

fn axpy(y: &State8, s: f64, d: &State8) -> State8 {
    core::array::from_fn(|i| y[i] + s * d[i])
}

/// Classic RK4 on the first-order system `(x, xdot)`, with early
/// termination on chart breakdown or blow-up.
pub fn geodesic(
    dynamics: &Dynamics,
    initial: &SamplePoint,
    options: &GeodesicOptions,
) -> Trajectory {
    let mut states = Vec::with_capacity(options.steps + 1);
    states.push(*initial);
    let mut y = pack(initial);
    let h = options.h;
    let mut termination = Termination::Completed;
    for step in 0..options.steps {
        let next = (|| -> Result<State8, GeomError> {
            let k1 = derivative(dynamics, &y)?;
            let k2 = derivative(dynamics, &axpy(&y, 0.5 * h, &k1))?;
            let k3 = derivative(dynamics, &axpy(&y, 0.5 * h, &k2))?;
            let k4 = derivative(dynamics, &axpy(&y, h, &k3))?;
            Ok(core::array::from_fn(|i| {
                y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            }))
        })();
        let next = match next {
            Ok(next) => next,
            Err(e) => {
                // A mid-stage evaluation may leave the chart before the
                // end-of-step checks fire; report the geometric reason.
                termination = if y[1] + h * y[5] <= 0.0 {
                    Termination::RadiusNonPositive { step }
                } else if (y[2] + h * y[6]).sin().abs() <= 1e-8 {
                    Termination::PoleProximity { step }
                } else {
                    Termination::DynamicsFailure { step, reason: e.to_string() }
                };
                break;
            }
        };
        if next[1] <= 0.0 {
            termination = Termination::RadiusNonPositive { step };
            break;
        }
        if next[2].sin().abs() <= 1e-8 {
            termination = Termination::PoleProximity { step };
            break;
        }
        if next.iter().any(|v| v.abs() > 1e12) {
            termination = Termination::StateExploded { step };
            break;
        }
        y = next;
        match unpack(&y) {
            Ok(p) => states.push(p),
            Err(e) => {
                termination = Termination::DynamicsFailure { step, reason: e.to_string() };
                break;
            }
        }
    }
    Trajectory { states, h, termination }
}

/// Max relative drift of `L` along the trajectory,
/// `max |L(state) - L(initial)| / max(1, |L(initial)|)`.
pub fn conservation_check(m: &FinslerModel, traj: &Trajectory) -> Result<f64, (usize, GeomError)> {
    let mut drift = 0.0f64;
    let l0 = m.value(&traj.states[0]).map_err(|e| (0, e))?;
    let scale = l0.abs().max(1.0);
    for (i, p) in traj.states.iter().enumerate().skip(1) {
        let l = m.value(p).map_err(|e| (i, e))?;
        drift = drift.max((l - l0).abs() / scale);
    }
    Ok(drift)
}

/// Measured RK4 convergence order by step halving against a reference run
/// at h/4 (all runs integrate to the same final parameter value).
pub fn convergence_order(dynamics: &Dynamics, initial: &SamplePoint, h: f64, steps: usize) -> f64 {
    let run = |h: f64, steps: usize| -> State8 {
        let traj = geodesic(dynamics, initial, &GeodesicOptions { h, steps });
        assert_eq!(traj.termination, Termination::Completed, "{:?}", traj.termination);
        pack(traj.states.last().unwrap())
    };
    let y1 = run(h, steps);
    let y2 = run(h / 2.0, steps * 2);
    let y4 = run(h / 4.0, steps * 4);
    let e12: f64 = (0..8).map(|i| (y1[i] - y2[i]).powi(2)).sum::<f64>().sqrt();
    let e24: f64 = (0..8).map(|i| (y2[i] - y4[i]).powi(2)).sum::<f64>().sqrt();
    (e12 / e24).log2()
}
