//! Named connection profiles and reference models used by the test suite,
//! the acceptance gate, and the bundled example configs.
//!
//! The non-trivial families were found by solving the bracket-consistency
//! conditions in closed form, so each one provably lands in its class:
//!
//! - power family: `k1 = 2 b0 e^{s r}`, `k5 = s`, `k8 = b0 e^{s r}`,
//!   `k10 = 1` gives `D = -s b0 e^{s r} != 0` and `lambda = F/D = 2`.
//! - exponential family: `k1 = k8 = 1/(t+r)`, `k4 = q`, `k5 = -1/(t+r)`,
//!   `k10 = 1` gives `D = 0`, `E != 0`, `mu = F/E = -1/q`.
//! - w-sector family: `k1 = h`, `k2 = -h`, `k3 = h`, `k7 = k10 = 1` with
//!   constant `h` gives `D = E = F = 0`, `b = c = 0` and a nonzero
//!   integrating factor `f = 2h(t - t0) - 2h(r - r0)`.
//! - one-variable family: `k1 = 2r`, `k5 = -t` gives constant bracket data
//!   `a1 = 2`, `a4 = 1` with vanishing double brackets.

use crate::connection::{ConnectionProfile, DomainRect};
use crate::exprlang::{parse, parse_with_vars, Ex, Expr};
use crate::model::{DirectModel, ExprSymmetricModel, FinslerModel, VARS_DIRECT, VARS_SYM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zeros() -> [Expr; 12] {
    core::array::from_fn(|_| Expr::Const(0.0))
}

fn profile(pairs: &[(usize, &str)], domain: DomainRect) -> ConnectionProfile {
    let mut k = zeros();
    for &(i, src) in pairs {
        k[i - 1] = parse(src).unwrap();
    }
    ConnectionProfile::new(k, domain)
}

/// All twelve functions identically zero.
pub fn zero() -> ConnectionProfile {
    profile(&[], DomainRect::new(-1.0, 1.0, 1.0, 2.0).unwrap())
}

/// Flat connection with a nonzero `k1`; still bracket-flat, so it lands in
/// the two-variable free class with a nontrivial transport.
pub fn free2d_k1() -> ConnectionProfile {
    profile(&[(1, "1")], DomainRect::new(-1.0, 1.0, 1.0, 2.0).unwrap())
}

/// Levi-Civita connection of flat space in spherical coordinates. The time
/// range is kept positive so the mirrored (role-swapped) profile still has a
/// valid radial chart.
pub fn minkowski() -> ConnectionProfile {
    profile(
        &[(9, "1/r"), (10, "-r")],
        DomainRect::new(0.2, 1.2, 1.0, 5.0).unwrap(),
    )
}

/// Schwarzschild Levi-Civita connection with mass 1, exterior chart.
pub fn schwarzschild() -> ConnectionProfile {
    profile(
        &[
            (2, "1/(r*(r-2))"),
            (4, "(r-2)/r^3"),
            (5, "-1/(r*(r-2))"),
            (9, "1/r"),
            (10, "-(r-2)"),
        ],
        DomainRect::new(0.0, 1.0, 3.0, 10.0).unwrap(),
    )
}

/// Gate-passing profile with `D != 0` (power-law class): the parameters
/// `b0 = 0.4`, `c0 = 0.2`, `s = 0.2` of the family
/// `k1 = (2 b0 - c0) e^{sr}`, `k4 = C4 - (c0 (b0 - c0)/s) e^{2sr}`,
/// `k5 = s`, `k6 = c0 e^{sr}`, `k8 = b0 e^{sr}`, `k10 = 1` give
/// `lambda = (c0 - 2 b0)/(c0 - b0) = 3` and a non-constant
/// `rho = 0.4 e^{0.4 r} - 2`. (The exponent 2 would make the metric
/// rank-deficient; 3 is soundly nondegenerate.)
pub fn power_profile() -> ConnectionProfile {
    profile(
        &[
            (1, "0.6*exp(0.2*r)"),
            (4, "1 - 0.2*exp(0.4*r)"),
            (5, "0.2"),
            (6, "0.2*exp(0.2*r)"),
            (8, "0.4*exp(0.2*r)"),
            (10, "1"),
        ],
        DomainRect::new(-1.0, 1.0, 0.0, 1.5).unwrap(),
    )
}

/// Gate-passing profile with `D = 0`, `E != 0` (exponential class),
/// `mu = -1`.
pub fn exponential_profile() -> ConnectionProfile {
    profile(
        &[
            (1, "1/(t+r)"),
            (4, "1"),
            (5, "-1/(t+r)"),
            (8, "1/(t+r)"),
            (10, "1"),
        ],
        DomainRect::new(0.5, 1.5, 1.0, 2.0).unwrap(),
    )
}

/// Gate-passing profile with `D = E = F = 0`, `b = c = 0` (w-sector class)
/// and nonzero integrating factor `f`.
pub fn wsector_profile() -> ConnectionProfile {
    profile(
        &[(1, "0.4"), (2, "-0.4"), (3, "0.4"), (7, "1"), (10, "1")],
        DomainRect::new(-1.0, 1.0, 0.0, 2.0).unwrap(),
    )
}

/// Gate-passing profile in the trivial-`delta_w` branch with nonvanishing
/// bracket (one-variable class): `a1 = 2`, `a4 = 1`, double brackets zero.
pub fn onevar_profile() -> ConnectionProfile {
    profile(
        &[(1, "2*r"), (5, "-t")],
        DomainRect::new(0.5, 1.5, 1.0, 2.0).unwrap(),
    )
}

/// The Minkowski profile with the roles of `t` and `r` exchanged
/// (`k10 = 0`, `k7 != 0`): exercises the mirrored classification path.
pub fn mirrored_minkowski() -> ConnectionProfile {
    minkowski().swap_roles()
}

/// Profile violating the structural necessity `k11 = 0`.
pub fn k11_profile() -> ConnectionProfile {
    profile(&[(11, "0.1")], DomainRect::new(-1.0, 1.0, 1.0, 2.0).unwrap())
}

/// Bracket-non-flat profile (`a1 = 1`): parallel transport along the two
/// axis path orders disagrees.
pub fn bracket_nonflat() -> ConnectionProfile {
    profile(&[(1, "r")], DomainRect::new(-1.0, 1.0, 1.0, 2.0).unwrap())
}

fn random_poly(rng: &mut ChaCha8Rng, scale: f64) -> Ex {
    let t = Ex::var(0, "t");
    let r = Ex::var(1, "r");
    let mut c = || Ex::konst(scale * rng.gen_range(-1.0..1.0));
    c() + c() * &t + c() * &r + c() * (&t * &r) + c() * t.sq() + c() * r.sq()
}

/// Fully random smooth polynomial profile; satisfies no bracket conditions
/// in general. Used for the unconditional algebraic identities.
pub fn random_smooth_profile(seed: u64) -> ConnectionProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2654435761).wrapping_add(1));
    let k: [Expr; 12] = core::array::from_fn(|i| {
        if i == 9 {
            // keep k10 bounded away from zero on the domain
            (1.0 + random_poly(&mut rng, 0.1)).expr().clone()
        } else if i >= 10 {
            Expr::Const(0.0)
        } else {
            random_poly(&mut rng, 0.25).expr().clone()
        }
    });
    ConnectionProfile::new(k, DomainRect::new(0.0, 1.0, 1.0, 2.0).unwrap())
}

/// Randomized smooth profile from the family that satisfies the two
/// delta_w-bracket conditions `a6 = a a7` and `a10 = a a11` exactly:
/// `a = a0` constant, `k7 = a0 k10`, and `k2`, `k3` solved from
/// `k2 = a0^2 k4 + a0 k6 - a0 k1`, `k3 = a0^2 k6 + a0 k5 - a0 k2`.
/// On this family the cross-identities `F = (d_t N - d_r M)/2` and
/// `D = (d_t N~ - d_r M~)/2` hold as mathematical identities.
pub fn random_gate_profile(seed: u64) -> ConnectionProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b9).wrapping_add(7));
    let a0 = Ex::konst(rng.gen_range(-0.8..0.8));
    let k1 = random_poly(&mut rng, 0.2);
    let k4 = random_poly(&mut rng, 0.2);
    let k5 = random_poly(&mut rng, 0.2);
    let k6 = random_poly(&mut rng, 0.2);
    let k8 = random_poly(&mut rng, 0.2);
    let k9 = random_poly(&mut rng, 0.2);
    let k10 = 1.0 + random_poly(&mut rng, 0.08);
    let k7 = &a0 * &k10;
    let k2 = a0.sq() * &k4 + &a0 * &k6 - &a0 * &k1;
    let k3 = a0.sq() * &k6 + &a0 * &k5 - &a0 * &k2;
    let k: [Expr; 12] = [
        k1.expr().clone(),
        k2.expr().clone(),
        k3.expr().clone(),
        k4.expr().clone(),
        k5.expr().clone(),
        k6.expr().clone(),
        k7.expr().clone(),
        k8.expr().clone(),
        k9.expr().clone(),
        k10.expr().clone(),
        Expr::Const(0.0),
        Expr::Const(0.0),
    ];
    ConnectionProfile::new(k, DomainRect::new(0.0, 1.0, 1.0, 2.0).unwrap())
}

/// Flat-space quadratic model `L = dt^2 - dr^2 - r^2 w^2`.
pub fn minkowski_model() -> FinslerModel {
    let expr = parse_with_vars("dt^2 - dr^2 - r^2*dw^2", &VARS_SYM).unwrap();
    ExprSymmetricModel::new("minkowski", expr).into_model()
}

/// Quartic-root model `L = sqrt(dt^4 + dr^4 + w^4)`; a Berwald function for
/// the zero connection.
pub fn quartic_model() -> FinslerModel {
    let expr = parse_with_vars("sqrt(dt^4 + dr^4 + dw^4)", &VARS_SYM).unwrap();
    ExprSymmetricModel::new("quartic", expr).into_model()
}

/// Non-Berwald control: flat quadratic plus a cubic-over-linear velocity
/// term whose third velocity derivatives do not vanish.
pub fn perturbed_nonberwald_model() -> FinslerModel {
    let expr =
        parse_with_vars("dt^2 - dr^2 - r^2*dw^2 + dt^3*dr/(dt+dr)", &VARS_SYM).unwrap();
    ExprSymmetricModel::new("perturbed", expr).into_model()
}

/// Symmetry-violation control with an explicit `dph`-only term.
pub fn phi_breaking_model() -> FinslerModel {
    let expr = parse_with_vars("dt^2 - dr^2 - r^2*dph^2", &VARS_DIRECT).unwrap();
    DirectModel::new("phi-breaking", expr).into_model()
}
