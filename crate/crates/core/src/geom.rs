//! Canonical geometric objects of a pseudo-Finsler function: metric tensor,
//! geodesic spray, nonlinear connection, Berwald curvature, horizontal
//! derivatives, homogeneity and rotation-symmetry residuals.
//!
//! Velocity derivatives come from jet evaluation. Coordinate derivatives in
//! `t`, `r` use each model's closed-form channel when present, otherwise
//! Richardson-extrapolated central differences. Derivatives in `theta` are
//! routed through the `w`-chain rule for `w`-symmetric models and finite
//! differences otherwise.

use crate::connection::{ConnError, ConnectionProfile};
use crate::jets::{solve4, VJet};
use crate::model::{velocity_jets, FinslerModel, GeomError, SamplePoint};

/// Relative finite-difference step for the fallback x-derivative channel.
const FD_STEP: f64 = 1e-5;

pub fn eval_l(m: &FinslerModel, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
    m.eval_jet(p, order)
}

fn richardson_jet(
    f: impl Fn(f64) -> Result<VJet, GeomError>,
    x: f64,
) -> Result<VJet, GeomError> {
    let h = FD_STEP * x.abs().max(1.0);
    let d = |h: f64| -> Result<VJet, GeomError> {
        Ok((&f(x + h)? - &f(x - h)?).scale(0.5 / h))
    };
    let d1 = d(h)?;
    let d2 = d(h / 2.0)?;
    Ok((&d2.scale(4.0) - &d1).scale(1.0 / 3.0))
}

/// `(d_t L, d_r L)` as jets in the velocity slots: the model's analytic
/// channel when available, Richardson central differences otherwise.
pub fn x_jets(
    m: &FinslerModel,
    p: &SamplePoint,
    order: usize,
) -> Result<(VJet, VJet), GeomError> {
    if let Some(res) = m.x_jets_analytic(p, order) {
        return res;
    }
    let dt = richardson_jet(
        |t| {
            let mut q = *p;
            q.t = t;
            m.eval_jet(&q, order)
        },
        p.t,
    )?;
    let dr = richardson_jet(
        |r| {
            let mut q = *p;
            q.r = r;
            m.eval_jet(&q, order)
        },
        p.r,
    )?;
    Ok((dt, dr))
}

/// Jet of `d_theta L` at the requested order. For `w`-symmetric models this
/// uses the chain rule `d_theta = (phd^2 sin cos / w) d_w` with
/// `w d_w L = thd d/d(thd) L + phd d/d(phd) L`, which is exact; direct
/// models fall back to finite differences in `theta`.
pub fn dtheta_jet(m: &FinslerModel, p: &SamplePoint, order: usize) -> Result<VJet, GeomError> {
    if m.w_symmetric() {
        let l = m.eval_jet(p, order + 1)?;
        let vj = velocity_jets(p, order);
        if vj.w2.value() < crate::model::W_MIN * crate::model::W_MIN {
            return Err(GeomError::Inadmissible(
                "w too small for the theta chain rule".into(),
            ));
        }
        let l_thd = l.derivative_jet(2);
        let l_phd = l.derivative_jet(3);
        let w_dw = &(&vj.thd * &l_thd) + &(&vj.phd * &l_phd);
        let sc = p.theta.sin() * p.theta.cos();
        let phd2 = &vj.phd * &vj.phd;
        Ok((&phd2 * &w_dw).div(&vj.w2)?.scale(sc))
    } else {
        richardson_jet(
            |theta| {
                let mut q = *p;
                q.theta = theta;
                m.eval_jet(&q, order)
            },
            p.theta,
        )
    }
}

fn dphi_value(m: &FinslerModel, p: &SamplePoint) -> Result<f64, GeomError> {
    if m.w_symmetric() {
        return Ok(0.0);
    }
    let d = richardson_jet(
        |phi| {
            let mut q = *p;
            q.phi = phi;
            m.eval_jet(&q, 0)
        },
        p.phi,
    )?;
    Ok(d.value())
}

/// Determinant of a 4x4 matrix by LU elimination with partial pivoting.
pub fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            #[allow(clippy::needless_range_loop)] // indexes two rows of `a`
            for k in col..4 {
                let v = f * a[col][k];
                a[row][k] -= v;
            }
        }
    }
    det
}

/// The L-metric `g_ab = 1/2 d^2 L / d(xdot^a) d(xdot^b)` and its
/// determinant.
pub fn metric(m: &FinslerModel, p: &SamplePoint) -> Result<([[f64; 4]; 4], f64), GeomError> {
    let l = m.eval_jet(p, 2)?;
    let mut g = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in a..4 {
            let mut alpha = [0u8; 4];
            alpha[a] += 1;
            alpha[b] += 1;
            let v = 0.5 * l.partial(alpha)?;
            g[a][b] = v;
            g[b][a] = v;
        }
    }
    let det = det4(&g);
    Ok((g, det))
}

/// Geodesic spray coefficients as jets of the requested order:
/// `G^a = 1/4 g^{ab} (xdot^c d_c d/d(xdot^b) L - d_b L)`.
pub fn spray_jets(
    m: &FinslerModel,
    p: &SamplePoint,
    g_order: usize,
) -> Result<[VJet; 4], GeomError> {
    let n_l = g_order + 2;
    let n_x = g_order + 1;
    let l = m.eval_jet(p, n_l)?;
    let (dt_l, dr_l) = x_jets(m, p, n_x)?;
    let dth_l = dtheta_jet(m, p, n_x)?;
    let vj = velocity_jets(p, g_order);
    let g: [[VJet; 4]; 4] = {
        let mut rows: Vec<[VJet; 4]> = Vec::with_capacity(4);
        for a in 0..4 {
            let da = l.derivative_jet(a);
            let row: [VJet; 4] = core::array::from_fn(|b| da.derivative_jet(b).scale(0.5));
            rows.push(row);
        }
        rows.try_into().unwrap()
    };
    let vel = [&vj.td, &vj.rd, &vj.thd, &vj.phd];
    let d_l = [&dt_l, &dr_l, &dth_l];
    let rhs: [VJet; 4] = core::array::from_fn(|b| {
        let mut acc = VJet::constant(0.0, g_order);
        for c in 0..3 {
            acc = &acc + &(vel[c] * &d_l[c].derivative_jet(b));
        }
        if b < 3 {
            acc = &acc - &d_l[b].truncate(g_order);
        }
        acc
    });
    let sol = solve4(&g, &rhs).map_err(|_| GeomError::SingularMetric)?;
    Ok(sol.map(|x| x.scale(0.25)))
}

/// Spray coefficient values `G^a` at the point.
pub fn spray(m: &FinslerModel, p: &SamplePoint) -> Result<[f64; 4], GeomError> {
    let g = spray_jets(m, p, 0)?;
    Ok(core::array::from_fn(|a| g[a].value()))
}

/// Cartan nonlinear connection `N^a_b = d G^a / d (xdot^b)` of the model.
pub fn nonlinear_connection(
    m: &FinslerModel,
    p: &SamplePoint,
) -> Result<[[f64; 4]; 4], GeomError> {
    let g = spray_jets(m, p, 1)?;
    let mut n = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut alpha = [0u8; 4];
            alpha[b] = 1;
            n[a][b] = g[a].partial(alpha)?;
        }
    }
    Ok(n)
}

/// Max over all indices of the third velocity derivatives of the spray;
/// zero precisely when the spray is quadratic at the point.
pub fn berwald_curvature_norm(m: &FinslerModel, p: &SamplePoint) -> Result<f64, GeomError> {
    let g = spray_jets(m, p, 3)?;
    let mut max = 0.0f64;
    for ga in &g {
        for alpha in VJet::multi_indices(3) {
            if alpha.iter().map(|&x| x as usize).sum::<usize>() != 3 {
                continue;
            }
            max = max.max(ga.partial(*alpha)?.abs());
        }
    }
    Ok(max)
}

fn conn_to_geom(e: ConnError) -> GeomError {
    match e {
        ConnError::Expr(e) => GeomError::Expr(e),
        other => GeomError::Inadmissible(other.to_string()),
    }
}

/// Horizontal derivatives `delta_a L = d_a L - N^c_a d/d(xdot^c) L` for the
/// *profile's* connection (full table including the sphere terms). Zero for
/// all four components characterizes metric compatibility.
pub fn horizontal_residuals(
    m: &FinslerModel,
    pr: &ConnectionProfile,
    p: &SamplePoint,
) -> Result<[f64; 4], GeomError> {
    let l = m.eval_jet(p, 1)?;
    let (dt_l, dr_l) = x_jets(m, p, 0)?;
    let dth = dtheta_jet(m, p, 0)?.value();
    let dph = dphi_value(m, p)?;
    let d = [dt_l.value(), dr_l.value(), dth, dph];
    let n = pr.nonlinear_matrix(p).map_err(conn_to_geom)?;
    let ldot: [f64; 4] = core::array::from_fn(|c| {
        let mut alpha = [0u8; 4];
        alpha[c] = 1;
        l.partial(alpha).unwrap()
    });
    Ok(core::array::from_fn(|a| {
        d[a] - (0..4).map(|c| n[c][a] * ldot[c]).sum::<f64>()
    }))
}

/// Euler (2-homogeneity) residual `|xdot^a d/d(xdot^a) L - 2 L|`.
pub fn euler_residual(m: &FinslerModel, p: &SamplePoint) -> Result<f64, GeomError> {
    let l = m.eval_jet(p, 1)?;
    let mut acc = -2.0 * l.value();
    for c in 0..4 {
        let mut alpha = [0u8; 4];
        alpha[c] = 1;
        acc += p.vel[c] * l.partial(alpha)?;
    }
    Ok(acc.abs())
}

/// Residuals of the three complete lifts of the rotation generators,
/// `|X^C_I(L)|` for I = 1, 2, 3. Coordinate derivatives of `L` are taken by
/// finite differences in `theta`, `phi`; velocity derivatives by jets.
pub fn so3_residuals(m: &FinslerModel, p: &SamplePoint) -> Result<[f64; 3], GeomError> {
    let s = p.theta.sin();
    if s.abs() < 1e-6 {
        return Err(GeomError::PoleProximity);
    }
    let cot = p.theta.cos() / s;
    let (sp, cp) = p.phi.sin_cos();
    let (thd, phd) = (p.vel[2], p.vel[3]);

    let l = m.eval_jet(p, 1)?;
    let l_thd = l.partial([0, 0, 1, 0])?;
    let l_phd = l.partial([0, 0, 0, 1])?;
    let d_theta = richardson_jet(
        |theta| {
            let mut q = *p;
            q.theta = theta;
            m.eval_jet(&q, 0)
        },
        p.theta,
    )?
    .value();
    let d_phi = dphi_value(m, p)?;

    let x1 = sp * d_theta + cot * cp * d_phi + phd * cp * l_thd
        - (thd * cp / (s * s) + phd * cot * sp) * l_phd;
    let x2 = -cp * d_theta + cot * sp * d_phi + phd * sp * l_thd
        + (-thd * sp / (s * s) + phd * cot * cp) * l_phd;
    let x3 = d_phi;
    Ok([x1.abs(), x2.abs(), x3.abs()])
}
