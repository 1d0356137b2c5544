//! Truncated multivariate Taylor ("jet") arithmetic in the four velocity
//! slots, up to total order 5.
//!
//! A [`VJet`] stores Taylor coefficients (partial derivative divided by the
//! factorial of the multi-index) for every multi-index of total degree up to
//! its order. Arithmetic truncates at that order, so a single pass through a
//! composed scalar function yields all velocity-space partials at once.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;
use thiserror::Error;

/// Number of velocity slots.
pub const NVARS: usize = 4;
/// Highest supported truncation order.
pub const MAX_ORDER: usize = 5;

/// Coefficient counts for orders 0..=5 over 4 variables.
const SIZE_BY_ORDER: [usize; MAX_ORDER + 1] = [1, 5, 15, 35, 70, 126];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("jet order {0} out of range 1..=5")]
    OrderOutOfRange(usize),
    #[error("multi-index degree {degree} exceeds jet order {order}")]
    DegreeTooHigh { degree: usize, order: usize },
    #[error("division by jet with zero base value")]
    DivisionByZero,
    #[error("{func} of non-admissible base value {value}")]
    Domain { func: &'static str, value: f64 },
}

struct Tables {
    /// Multi-indices in graded order (degree-major, lexicographic within).
    idx: Vec<[u8; NVARS]>,
    /// `rank[a][b][c][d]` is the position of the multi-index, or `u16::MAX`.
    rank: Vec<u16>,
    /// Product triples `(i, j, k)` with `idx[i] + idx[j] = idx[k]`, sorted by
    /// total degree of the result; `prod_end[d]` bounds the prefix with
    /// result degree <= d.
    prod: Vec<(u16, u16, u16)>,
    prod_end: [usize; MAX_ORDER + 1],
    /// Factorial of each multi-index.
    fact: Vec<f64>,
}

fn rank_slot(alpha: &[u8; NVARS]) -> usize {
    ((alpha[0] as usize * 6 + alpha[1] as usize) * 6 + alpha[2] as usize) * 6 + alpha[3] as usize
}

fn degree(alpha: &[u8; NVARS]) -> usize {
    alpha.iter().map(|&a| a as usize).sum()
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut idx = Vec::with_capacity(SIZE_BY_ORDER[MAX_ORDER]);
        for d in 0..=MAX_ORDER {
            for a0 in (0..=d).rev() {
                for a1 in (0..=d - a0).rev() {
                    for a2 in (0..=d - a0 - a1).rev() {
                        let a3 = d - a0 - a1 - a2;
                        idx.push([a0 as u8, a1 as u8, a2 as u8, a3 as u8]);
                    }
                }
            }
        }
        let mut rank = vec![u16::MAX; 6 * 6 * 6 * 6];
        for (i, alpha) in idx.iter().enumerate() {
            rank[rank_slot(alpha)] = i as u16;
        }
        let mut prod: Vec<(u16, u16, u16)> = Vec::new();
        for (i, ai) in idx.iter().enumerate() {
            for (j, aj) in idx.iter().enumerate() {
                let d = degree(ai) + degree(aj);
                if d > MAX_ORDER {
                    continue;
                }
                let sum = [ai[0] + aj[0], ai[1] + aj[1], ai[2] + aj[2], ai[3] + aj[3]];
                prod.push((i as u16, j as u16, rank[rank_slot(&sum)]));
            }
        }
        prod.sort_by_key(|&(i, j, _)| degree(&idx[i as usize]) + degree(&idx[j as usize]));
        let mut prod_end = [0usize; MAX_ORDER + 1];
        for (d, end) in prod_end.iter_mut().enumerate() {
            *end = prod
                .iter()
                .take_while(|&&(i, j, _)| {
                    degree(&idx[i as usize]) + degree(&idx[j as usize]) <= d
                })
                .count();
        }
        let fact: Vec<f64> = idx
            .iter()
            .map(|a| a.iter().map(|&x| FACTORIALS[x as usize]).product())
            .collect();
        Tables { idx, rank, prod, prod_end, fact }
    })
}

const FACTORIALS: [f64; 6] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];

/// Truncated Taylor value in the four velocity directions.
#[derive(Clone, Debug, PartialEq)]
pub struct VJet {
    order: usize,
    c: Vec<f64>,
}

impl VJet {
    /// Constant jet (all derivative coefficients zero).
    pub fn constant(value: f64, order: usize) -> VJet {
        assert!(order <= MAX_ORDER);
        let mut c = vec![0.0; SIZE_BY_ORDER[order]];
        c[0] = value;
        VJet { order, c }
    }

    /// The four identity jets on velocity space: jet `i` has base
    /// `values[i]` and first-order coefficient 1 in slot `i`.
    pub fn seed(values: [f64; NVARS], order: usize) -> Result<[VJet; NVARS], JetError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(JetError::OrderOutOfRange(order));
        }
        Ok(Self::seed_unchecked(values, order))
    }

    /// As [`VJet::seed`] but also accepts order 0 (value-only evaluation).
    pub(crate) fn seed_unchecked(values: [f64; NVARS], order: usize) -> [VJet; NVARS] {
        let mut out: Vec<VJet> = Vec::with_capacity(NVARS);
        for i in 0..NVARS {
            let mut j = VJet::constant(values[i], order);
            if order >= 1 {
                // slot i at degree 1 sits at position 1 + (NVARS - 1 - i)
                // in the graded-lex ordering [1,0,0,0] > [0,1,0,0] > ...
                let mut alpha = [0u8; NVARS];
                alpha[i] = 1;
                let pos = tables().rank[rank_slot(&alpha)] as usize;
                j.c[pos] = 1.0;
            }
            out.push(j);
        }
        out.try_into().unwrap()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Base value of the jet.
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Taylor coefficient for the multi-index (partial / alpha!).
    pub fn coeff(&self, alpha: [u8; NVARS]) -> f64 {
        let d = degree(&alpha);
        if d > self.order {
            return 0.0;
        }
        self.c[tables().rank[rank_slot(&alpha)] as usize]
    }

    /// True partial derivative for the multi-index (coefficient times alpha!).
    pub fn partial(&self, alpha: [u8; NVARS]) -> Result<f64, JetError> {
        let d = degree(&alpha);
        if d > self.order {
            return Err(JetError::DegreeTooHigh { degree: d, order: self.order });
        }
        let t = tables();
        let pos = t.rank[rank_slot(&alpha)] as usize;
        Ok(self.c[pos] * t.fact[pos])
    }

    /// Drop coefficients above `order`.
    pub fn truncate(&self, order: usize) -> VJet {
        assert!(order <= MAX_ORDER);
        if order >= self.order {
            return self.clone();
        }
        VJet { order, c: self.c[..SIZE_BY_ORDER[order]].to_vec() }
    }

    /// Jet of the first partial with respect to `slot`, one order lower.
    pub fn derivative_jet(&self, slot: usize) -> VJet {
        assert!(slot < NVARS && self.order >= 1);
        let t = tables();
        let order = self.order - 1;
        let mut c = vec![0.0; SIZE_BY_ORDER[order]];
        for (pos, coeff) in c.iter_mut().enumerate() {
            let mut alpha = t.idx[pos];
            alpha[slot] += 1;
            let src = t.rank[rank_slot(&alpha)] as usize;
            *coeff = self.c[src] * (alpha[slot] as f64);
        }
        VJet { order, c }
    }

    fn same_order(&self, rhs: &VJet) -> usize {
        assert_eq!(self.order, rhs.order, "jet order mismatch");
        self.order
    }

    pub fn scale(&self, s: f64) -> VJet {
        VJet { order: self.order, c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn add_scalar(&self, s: f64) -> VJet {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    fn mul_impl(&self, rhs: &VJet) -> VJet {
        let order = self.same_order(rhs);
        let t = tables();
        let mut c = vec![0.0; SIZE_BY_ORDER[order]];
        for &(i, j, k) in &t.prod[..t.prod_end[order]] {
            c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        VJet { order, c }
    }

    /// Compose a scalar function with this jet given the function's
    /// derivatives at the jet's base value: `derivs[k]` = f^(k)(base),
    /// for k = 0..=order. Evaluated by Horner's rule on the offset jet.
    pub fn compose_scalar(&self, derivs: &[f64]) -> VJet {
        assert!(derivs.len() > self.order);
        if self.order == 0 {
            return VJet::constant(derivs[0], 0);
        }
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let n = self.order;
        let mut acc = VJet::constant(derivs[n] / FACTORIALS[n], n);
        for k in (0..n).rev() {
            acc = acc.mul_impl(&delta).add_scalar(derivs[k] / FACTORIALS[k]);
        }
        acc
    }

    pub fn recip(&self) -> Result<VJet, JetError> {
        let y = self.value();
        if y == 0.0 {
            return Err(JetError::DivisionByZero);
        }
        let mut derivs = [0.0; MAX_ORDER + 1];
        let mut p = 1.0 / y;
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = p * FACTORIALS[k] * if k % 2 == 0 { 1.0 } else { -1.0 };
            p /= y;
        }
        Ok(self.compose_scalar(&derivs[..self.order + 1]))
    }

    pub fn div(&self, rhs: &VJet) -> Result<VJet, JetError> {
        Ok(self.mul_impl(&rhs.recip()?))
    }

    pub fn exp(&self) -> VJet {
        let e = self.value().exp();
        let derivs = [e; MAX_ORDER + 1];
        self.compose_scalar(&derivs[..self.order + 1])
    }

    pub fn ln(&self) -> Result<VJet, JetError> {
        let y = self.value();
        if y <= 0.0 {
            return Err(JetError::Domain { func: "log", value: y });
        }
        let mut derivs = [0.0; MAX_ORDER + 1];
        derivs[0] = y.ln();
        let mut p = 1.0 / y;
        for k in 1..=self.order {
            derivs[k] = p * FACTORIALS[k - 1] * if k % 2 == 1 { 1.0 } else { -1.0 };
            p /= y;
        }
        Ok(self.compose_scalar(&derivs[..self.order + 1]))
    }

    pub fn sqrt(&self) -> Result<VJet, JetError> {
        let y = self.value();
        if self.order == 0 {
            if y < 0.0 {
                return Err(JetError::Domain { func: "sqrt", value: y });
            }
            return Ok(VJet::constant(y.sqrt(), 0));
        }
        if y <= 0.0 {
            return Err(JetError::Domain { func: "sqrt", value: y });
        }
        self.powf(0.5)
    }

    /// Power with a constant real exponent; base must be positive unless the
    /// jet is order 0 or the exponent is handled by [`VJet::powi`].
    pub fn powf(&self, e: f64) -> Result<VJet, JetError> {
        let y = self.value();
        if self.order == 0 {
            let v = y.powf(e);
            if !v.is_finite() {
                return Err(JetError::Domain { func: "powf", value: y });
            }
            return Ok(VJet::constant(v, 0));
        }
        if y <= 0.0 {
            return Err(JetError::Domain { func: "powf", value: y });
        }
        let mut derivs = [0.0; MAX_ORDER + 1];
        let mut coef = 1.0;
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = coef * y.powf(e - k as f64);
            coef *= e - k as f64;
        }
        Ok(self.compose_scalar(&derivs[..self.order + 1]))
    }

    /// Integer power by repeated multiplication (valid for any base sign).
    pub fn powi(&self, e: i32) -> Result<VJet, JetError> {
        if e < 0 {
            return self.powi(-e)?.recip();
        }
        let mut acc = VJet::constant(1.0, self.order);
        let mut base = self.clone();
        let mut e = e as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul_impl(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_impl(&base);
            }
        }
        Ok(acc)
    }

    /// |x| with a sign branch; the base value must be nonzero.
    pub fn abs(&self) -> Result<VJet, JetError> {
        let y = self.value();
        if y == 0.0 && self.order > 0 {
            return Err(JetError::Domain { func: "abs", value: y });
        }
        Ok(if y < 0.0 { -self.clone() } else { self.clone() })
    }

    pub fn sin(&self) -> VJet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let mut derivs = [0.0; MAX_ORDER + 1];
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = cycle[k % 4];
        }
        self.compose_scalar(&derivs[..self.order + 1])
    }

    pub fn cos(&self) -> VJet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let mut derivs = [0.0; MAX_ORDER + 1];
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = cycle[k % 4];
        }
        self.compose_scalar(&derivs[..self.order + 1])
    }

    pub fn tan(&self) -> Result<VJet, JetError> {
        let c = self.cos();
        if c.value() == 0.0 {
            return Err(JetError::Domain { func: "tan", value: self.value() });
        }
        self.sin().div(&c)
    }

    pub fn sinh(&self) -> VJet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let mut derivs = [0.0; MAX_ORDER + 1];
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = if k % 2 == 0 { s } else { c };
        }
        self.compose_scalar(&derivs[..self.order + 1])
    }

    pub fn cosh(&self) -> VJet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let mut derivs = [0.0; MAX_ORDER + 1];
        for (k, d) in derivs.iter_mut().enumerate().take(self.order + 1) {
            *d = if k % 2 == 0 { c } else { s };
        }
        self.compose_scalar(&derivs[..self.order + 1])
    }

    pub fn tanh(&self) -> Result<VJet, JetError> {
        self.sinh().div(&self.cosh())
    }

    /// All multi-indices with degree <= `order`, in the storage ordering.
    pub fn multi_indices(order: usize) -> &'static [[u8; NVARS]] {
        &tables().idx[..SIZE_BY_ORDER[order.min(MAX_ORDER)]]
    }

    /// True when every coefficient is finite.
    pub fn all_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    /// The jet with velocity slots 0 and 1 exchanged (used by the mirrored
    /// coordinate-role adapter).
    pub fn swap_slots01(&self) -> VJet {
        let t = tables();
        let mut c = vec![0.0; self.c.len()];
        for (pos, &v) in self.c.iter().enumerate() {
            let a = t.idx[pos];
            let swapped = [a[1], a[0], a[2], a[3]];
            c[t.rank[rank_slot(&swapped)] as usize] = v;
        }
        VJet { order: self.order, c }
    }
}

impl Add for &VJet {
    type Output = VJet;
    fn add(self, rhs: &VJet) -> VJet {
        let order = self.same_order(rhs);
        VJet {
            order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &VJet {
    type Output = VJet;
    fn sub(self, rhs: &VJet) -> VJet {
        let order = self.same_order(rhs);
        VJet {
            order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &VJet {
    type Output = VJet;
    fn mul(self, rhs: &VJet) -> VJet {
        self.mul_impl(rhs)
    }
}

impl Neg for VJet {
    type Output = VJet;
    fn neg(mut self) -> VJet {
        for v in &mut self.c {
            *v = -*v;
        }
        self
    }
}

impl Neg for &VJet {
    type Output = VJet;
    fn neg(self) -> VJet {
        -self.clone()
    }
}

/// Solve the 4x4 jet-valued linear system `a x = b` by Gaussian elimination
/// with partial pivoting on base values.
pub fn solve4(a: &[[VJet; 4]; 4], b: &[VJet; 4]) -> Result<[VJet; 4], JetError> {
    if a.iter().flatten().chain(b.iter()).any(|j| !j.all_finite()) {
        return Err(JetError::Domain { func: "solve4", value: f64::NAN });
    }
    let scale = a
        .iter()
        .flatten()
        .map(|j| j.value().abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut m: Vec<Vec<VJet>> = (0..4)
        .map(|i| {
            let mut row: Vec<VJet> = a[i].to_vec();
            row.push(b[i].clone());
            row
        })
        .collect();
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| {
                m[i][col]
                    .value()
                    .abs()
                    .total_cmp(&m[j][col].value().abs())
            })
            .unwrap();
        let pv = m[piv][col].value();
        // Relative pivot threshold: rank deficiency shows up as pivots at
        // the rounding floor of the matrix scale. Overflow during
        // elimination surfaces as a non-finite pivot.
        if !pv.is_finite() || pv.abs() < 1e-11 * scale {
            return Err(JetError::DivisionByZero);
        }
        m.swap(col, piv);
        let inv = m[col][col].recip()?;
        for entry in m[col][col..].iter_mut() {
            *entry = entry.mul_impl(&inv);
        }
        for row in 0..4 {
            if row == col {
                continue;
            }
            let factor = m[row][col].clone();
            if factor.c.iter().all(|&v| v == 0.0) {
                continue;
            }
            #[allow(clippy::needless_range_loop)] // indexes two rows of `m`
            for k in col..5 {
                let delta = factor.mul_impl(&m[col][k]);
                m[row][k] = &m[row][k] - &delta;
            }
        }
    }
    let mut it = m.into_iter().map(|mut row| row.pop().unwrap());
    Ok([
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ])
}
