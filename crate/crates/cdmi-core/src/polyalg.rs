//! Truncated multivariate Taylor polynomial arithmetic in six variables.
//!
//! Polynomials are truncated at a configurable total degree `n` and stored
//! densely in graded-lexicographic order. All arithmetic discards terms of
//! total degree above `n`, so the ring behaves like a jet algebra: the
//! deviation variables are nilpotent of index `n + 1`. Elementary functions
//! (reciprocal, square root, arcsine, arctangent, real powers) are evaluated
//! by composing the univariate Maclaurin series of the function around the
//! polynomial's constant part with its nilpotent remainder.
//!
//! Values are immutable after construction and every operation is a pure
//! function, so polynomials can be shared and evaluated concurrently.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

/// Number of deviation variables. Fixed: the state space is 6-dimensional.
pub const NVARS: usize = 6;

/// Errors from polynomial intrinsics and checked constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    /// The constant part of the argument is outside the domain of the
    /// elementary function being composed.
    #[error("intrinsic `{func}` undefined at constant part {constant}")]
    Domain { func: &'static str, constant: f64 },
    /// Requested truncation order is unsupported.
    #[error("unsupported truncation order {0} (must be in 1..={MAX_ORDER})")]
    BadOrder(usize),
}

/// Largest supported truncation order. The dense multiplication table grows
/// as dim(n)^2 with dim(10) = 8008; anything beyond that is outside the
/// intended use of this algebra.
pub const MAX_ORDER: usize = 10;

/// Exponent tuple of one monomial in the six deviation variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub [u8; NVARS]);

impl MultiIndex {
    /// Total degree (sum of exponents).
    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }
}

/// Shared lookup tables for one truncation order.
struct AlgebraTables {
    order: usize,
    dim: usize,
    /// Monomials in graded-lex order: ascending total degree, descending
    /// lexicographic within a degree block.
    indices: Vec<MultiIndex>,
    /// `degree_offsets[d]..degree_offsets[d + 1]` is the rank range of the
    /// degree-`d` block; length `order + 2`.
    degree_offsets: Vec<usize>,
    rank_of: HashMap<MultiIndex, u32>,
    /// `prod[i * dim + j]` is the rank of `indices[i] + indices[j]`, valid
    /// whenever the degrees sum to at most `order`.
    prod: Vec<u32>,
}

fn enumerate_degree(degree: usize, out: &mut Vec<MultiIndex>) {
    fn rec(remaining: usize, var: usize, current: &mut [u8; NVARS], out: &mut Vec<MultiIndex>) {
        if var == NVARS - 1 {
            current[var] = remaining as u8;
            out.push(MultiIndex(*current));
            return;
        }
        for e in (0..=remaining).rev() {
            current[var] = e as u8;
            rec(remaining - e, var + 1, current, out);
        }
    }
    let mut current = [0u8; NVARS];
    rec(degree, 0, &mut current, out);
}

impl AlgebraTables {
    fn new(order: usize) -> Result<Self, PolyError> {
        if order == 0 || order > MAX_ORDER {
            return Err(PolyError::BadOrder(order));
        }
        let mut indices = Vec::new();
        let mut degree_offsets = vec![0usize];
        for d in 0..=order {
            enumerate_degree(d, &mut indices);
            degree_offsets.push(indices.len());
        }
        let dim = indices.len();
        let mut rank_of = HashMap::with_capacity(dim);
        for (r, idx) in indices.iter().enumerate() {
            rank_of.insert(*idx, r as u32);
        }
        let mut prod = vec![u32::MAX; dim * dim];
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if a.degree() + b.degree() > order {
                    continue;
                }
                let mut sum = [0u8; NVARS];
                for v in 0..NVARS {
                    sum[v] = a.0[v] + b.0[v];
                }
                prod[i * dim + j] = rank_of[&MultiIndex(sum)];
            }
        }
        Ok(Self {
            order,
            dim,
            indices,
            degree_offsets,
            rank_of,
            prod,
        })
    }
}

/// Handle to the shared tables of one truncation order. Cloning is cheap and
/// all polynomials combined in an expression must come from the same algebra.
#[derive(Clone)]
pub struct Algebra {
    tables: Arc<AlgebraTables>,
}

impl std::fmt::Debug for Algebra {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Algebra")
            .field("order", &self.tables.order)
            .field("dim", &self.tables.dim)
            .finish()
    }
}

impl Algebra {
    pub fn new(order: usize) -> Result<Self, PolyError> {
        Ok(Self {
            tables: Arc::new(AlgebraTables::new(order)?),
        })
    }

    pub fn order(&self) -> usize {
        self.tables.order
    }

    /// Number of stored coefficients (monomials of total degree <= order).
    pub fn dim(&self) -> usize {
        self.tables.dim
    }

    /// Monomials in storage (graded-lex) order.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.tables.indices
    }

    /// Rank range of the degree-`d` coefficient block.
    pub fn degree_block(&self, d: usize) -> std::ops::Range<usize> {
        self.tables.degree_offsets[d]..self.tables.degree_offsets[d + 1]
    }

    pub fn zero(&self) -> TruncatedPoly {
        TruncatedPoly {
            alg: self.clone(),
            coeffs: vec![0.0; self.tables.dim],
        }
    }

    pub fn constant(&self, c: f64) -> TruncatedPoly {
        let mut p = self.zero();
        p.coeffs[0] = c;
        p
    }

    /// The deviation variable `var` (a pure degree-one monomial).
    pub fn variable(&self, var: usize) -> TruncatedPoly {
        assert!(var < NVARS, "variable index {var} out of range");
        // Degree-1 block is ordered x1, x2, ..., x6.
        let mut p = self.zero();
        p.coeffs[1 + var] = 1.0;
        p
    }

    fn same_as(&self, other: &Algebra) -> bool {
        Arc::ptr_eq(&self.tables, &other.tables) || self.tables.order == other.tables.order
    }
}

/// Dense truncated Taylor polynomial over the six deviation variables.
#[derive(Clone, Debug)]
pub struct TruncatedPoly {
    alg: Algebra,
    coeffs: Vec<f64>,
}

impl TruncatedPoly {
    pub fn algebra(&self) -> &Algebra {
        &self.alg
    }

    pub fn order(&self) -> usize {
        self.alg.order()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn constant_part(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeff(&self, idx: MultiIndex) -> f64 {
        match self.alg.tables.rank_of.get(&idx) {
            Some(&r) => self.coeffs[r as usize],
            None => 0.0,
        }
    }

    pub fn set_coeff(&mut self, idx: MultiIndex, value: f64) {
        let r = *self
            .alg
            .tables
            .rank_of
            .get(&idx)
            .unwrap_or_else(|| panic!("multi-index {idx:?} exceeds order {}", self.order()));
        self.coeffs[r as usize] = value;
    }

    fn assert_compatible(&self, other: &TruncatedPoly) {
        assert!(
            self.alg.same_as(&other.alg),
            "mixed truncation orders in one expression: {} vs {}",
            self.order(),
            other.order()
        );
    }

    pub fn add(&self, other: &TruncatedPoly) -> TruncatedPoly {
        self.assert_compatible(other);
        let mut out = self.clone();
        for (o, c) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o += c;
        }
        out
    }

    pub fn sub(&self, other: &TruncatedPoly) -> TruncatedPoly {
        self.assert_compatible(other);
        let mut out = self.clone();
        for (o, c) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o -= c;
        }
        out
    }

    pub fn neg(&self) -> TruncatedPoly {
        let mut out = self.clone();
        for o in out.coeffs.iter_mut() {
            *o = -*o;
        }
        out
    }

    pub fn scale(&self, k: f64) -> TruncatedPoly {
        let mut out = self.clone();
        for o in out.coeffs.iter_mut() {
            *o *= k;
        }
        out
    }

    /// `self + c` on the constant coefficient.
    pub fn shift(&self, c: f64) -> TruncatedPoly {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    /// Truncated product: coefficient convolution with every term of total
    /// degree above the order discarded.
    pub fn mul(&self, other: &TruncatedPoly) -> TruncatedPoly {
        self.assert_compatible(other);
        let t = &self.alg.tables;
        let n = t.order;
        let dim = t.dim;
        let mut out = vec![0.0; dim];
        for d1 in 0..=n {
            let hi2 = t.degree_offsets[n - d1 + 1];
            for i in t.degree_offsets[d1]..t.degree_offsets[d1 + 1] {
                let a = self.coeffs[i];
                if a == 0.0 {
                    continue;
                }
                let row = &t.prod[i * dim..(i + 1) * dim];
                for j in 0..hi2 {
                    let b = other.coeffs[j];
                    if b != 0.0 {
                        out[row[j] as usize] += a * b;
                    }
                }
            }
        }
        TruncatedPoly {
            alg: self.alg.clone(),
            coeffs: out,
        }
    }

    /// Evaluate at a concrete deviation by direct monomial accumulation.
    pub fn eval(&self, delta: &[f64; NVARS]) -> f64 {
        let t = &self.alg.tables;
        let n = t.order;
        // powers[v][e] = delta[v]^e
        let mut powers = [[1.0f64; MAX_ORDER + 1]; NVARS];
        for v in 0..NVARS {
            for e in 1..=n {
                powers[v][e] = powers[v][e - 1] * delta[v];
            }
        }
        let mut acc = 0.0;
        for (r, idx) in t.indices.iter().enumerate() {
            let c = self.coeffs[r];
            if c == 0.0 {
                continue;
            }
            let mut m = c;
            for v in 0..NVARS {
                let e = idx.0[v] as usize;
                if e > 0 {
                    m *= powers[v][e];
                }
            }
            acc += m;
        }
        acc
    }

    /// Formal partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> TruncatedPoly {
        assert!(var < NVARS, "variable index {var} out of range");
        let t = &self.alg.tables;
        let mut out = self.alg.zero();
        for (r, idx) in t.indices.iter().enumerate() {
            let e = idx.0[var];
            if e == 0 || self.coeffs[r] == 0.0 {
                continue;
            }
            let mut lowered = idx.0;
            lowered[var] -= 1;
            let target = t.rank_of[&MultiIndex(lowered)] as usize;
            out.coeffs[target] += f64::from(e) * self.coeffs[r];
        }
        out
    }

    /// Strips the constant term, leaving the nilpotent part.
    pub fn nilpotent_part(&self) -> TruncatedPoly {
        let mut out = self.clone();
        out.coeffs[0] = 0.0;
        out
    }

    /// Horner evaluation of a univariate series at this polynomial:
    /// `series[0] + series[1] self + series[2] self^2 + ...`.
    pub fn compose_series(&self, series: &[f64]) -> TruncatedPoly {
        let mut acc = self.alg.constant(*series.last().expect("empty series"));
        for &s in series.iter().rev().skip(1) {
            acc = acc.mul(self).shift(s);
        }
        acc
    }

    /// Maximum total degree with a nonzero coefficient (0 for the zero
    /// polynomial).
    pub fn max_degree(&self) -> usize {
        for d in (0..=self.order()).rev() {
            if self.coeffs[self.alg.degree_block(d)]
                .iter()
                .any(|&c| c != 0.0)
            {
                return d;
            }
        }
        0
    }

    /// Debug text form: one `e1 e2 e3 e4 e5 e6 coefficient` line per nonzero
    /// coefficient, graded-lex order, 17 significant digits.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        for (r, idx) in self.alg.tables.indices.iter().enumerate() {
            let c = self.coeffs[r];
            if c == 0.0 {
                continue;
            }
            for v in 0..NVARS {
                let _ = write!(out, "{} ", idx.0[v]);
            }
            let _ = writeln!(out, "{c:.16e}");
        }
        out
    }

    pub fn recip(&self) -> Result<TruncatedPoly, PolyError> {
        let c = self.constant_part();
        if c == 0.0 || !c.is_finite() {
            return Err(PolyError::Domain {
                func: "recip",
                constant: c,
            });
        }
        let n = self.order();
        // (c + u)^-1 = sum (-1)^k c^-(k+1) u^k
        let mut series = vec![0.0; n + 1];
        series[0] = 1.0 / c;
        for k in 1..=n {
            series[k] = -series[k - 1] / c;
        }
        Ok(self.nilpotent_part().compose_series(&series))
    }

    pub fn sqrt(&self) -> Result<TruncatedPoly, PolyError> {
        let c = self.constant_part();
        if c <= 0.0 || !c.is_finite() {
            return Err(PolyError::Domain {
                func: "sqrt",
                constant: c,
            });
        }
        let n = self.order();
        // binomial series of (c + u)^(1/2)
        let mut series = vec![0.0; n + 1];
        series[0] = c.sqrt();
        for k in 1..=n {
            series[k] = series[k - 1] * (1.5 - k as f64) / (k as f64 * c);
        }
        Ok(self.nilpotent_part().compose_series(&series))
    }

    /// Real power `self^p`; requires a positive constant part.
    pub fn powf(&self, p: f64) -> Result<TruncatedPoly, PolyError> {
        let c = self.constant_part();
        if c <= 0.0 || !c.is_finite() {
            return Err(PolyError::Domain {
                func: "powf",
                constant: c,
            });
        }
        let n = self.order();
        let mut series = vec![0.0; n + 1];
        series[0] = c.powf(p);
        for k in 1..=n {
            series[k] = series[k - 1] * (p - (k - 1) as f64) / (k as f64 * c);
        }
        Ok(self.nilpotent_part().compose_series(&series))
    }

    pub fn asin(&self) -> Result<TruncatedPoly, PolyError> {
        let c = self.constant_part();
        if c.abs() >= 1.0 || !c.is_finite() {
            return Err(PolyError::Domain {
                func: "asin",
                constant: c,
            });
        }
        let n = self.order();
        // asin(c + t) by integrating (1 - (c + t)^2)^(-1/2) term by term.
        let s = [1.0 - c * c, -2.0 * c, -1.0];
        let q = series_pow(&s, -0.5, n.saturating_sub(1));
        let mut series = vec![0.0; n + 1];
        series[0] = c.asin();
        for k in 1..=n {
            series[k] = q[k - 1] / k as f64;
        }
        Ok(self.nilpotent_part().compose_series(&series))
    }

    pub fn atan(&self) -> Result<TruncatedPoly, PolyError> {
        let c = self.constant_part();
        if !c.is_finite() {
            return Err(PolyError::Domain {
                func: "atan",
                constant: c,
            });
        }
        let n = self.order();
        // atan(c + t) by integrating 1 / (1 + (c + t)^2) term by term.
        let s = [1.0 + c * c, 2.0 * c, 1.0];
        let q = series_recip(&s, n.saturating_sub(1));
        let mut series = vec![0.0; n + 1];
        series[0] = c.atan();
        for k in 1..=n {
            series[k] = q[k - 1] / k as f64;
        }
        Ok(self.nilpotent_part().compose_series(&series))
    }
}

/// Named elementary function, for the generic `intrinsic` entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intrinsic {
    Recip,
    Sqrt,
    Asin,
    Atan,
}

/// Order-n truncation of `f` composed with `p`.
pub fn intrinsic(f: Intrinsic, p: &TruncatedPoly) -> Result<TruncatedPoly, PolyError> {
    match f {
        Intrinsic::Recip => p.recip(),
        Intrinsic::Sqrt => p.sqrt(),
        Intrinsic::Asin => p.asin(),
        Intrinsic::Atan => p.atan(),
    }
}

/// Univariate truncated series `s(t)^p` for `s[0] > 0`, to order `n`.
fn series_pow(s: &[f64], p: f64, n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n + 1];
    q[0] = s[0].powf(p);
    for m in 1..=n {
        let mut acc = 0.0;
        for k in 1..=m.min(s.len() - 1) {
            acc += (p * k as f64 - (m - k) as f64) * s[k] * q[m - k];
        }
        q[m] = acc / (m as f64 * s[0]);
    }
    q
}

/// Univariate truncated series `1 / s(t)` for `s[0] != 0`, to order `n`.
fn series_recip(s: &[f64], n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n + 1];
    q[0] = 1.0 / s[0];
    for m in 1..=n {
        let mut acc = 0.0;
        for k in 1..=m.min(s.len() - 1) {
            acc += s[k] * q[m - k];
        }
        q[m] = -acc / s[0];
    }
    q
}

/// Four-quadrant arctangent of two polynomials. The branch is fixed by the
/// constant parts; the nilpotent correction is smooth as long as the constant
/// line of sight stays away from the origin.
pub fn atan2_poly(y: &TruncatedPoly, x: &TruncatedPoly) -> Result<TruncatedPoly, PolyError> {
    let y0 = y.constant_part();
    let x0 = x.constant_part();
    if y0 == 0.0 && x0 == 0.0 {
        return Err(PolyError::Domain {
            func: "atan2",
            constant: 0.0,
        });
    }
    let base = y0.atan2(x0);
    if x0.abs() >= y0.abs() {
        // atan2(y, x) = atan(y / x) + quadrant constant
        let t = y.mul(&x.recip()?).atan()?;
        let t0 = t.constant_part();
        Ok(t.shift(base - t0))
    } else {
        // atan2(y, x) = +/- pi/2 - atan(x / y); better conditioned near the
        // poles of y / x.
        let t = x.mul(&y.recip()?).atan()?;
        let t0 = t.constant_part();
        Ok(t.neg().shift(base + t0))
    }
}

/// Vector of truncated polynomials sharing one algebra: flow maps have six
/// components, measurement maps two per observation epoch.
#[derive(Clone, Debug)]
pub struct PolyMap {
    components: Vec<TruncatedPoly>,
}

impl PolyMap {
    pub fn new(components: Vec<TruncatedPoly>) -> Self {
        assert!(!components.is_empty(), "empty polynomial map");
        let first = components[0].alg.clone();
        for c in &components[1..] {
            assert!(
                first.same_as(&c.alg),
                "polynomial map components must share one truncation order"
            );
        }
        Self { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &TruncatedPoly {
        &self.components[i]
    }

    pub fn components(&self) -> &[TruncatedPoly] {
        &self.components
    }

    pub fn algebra(&self) -> &Algebra {
        self.components[0].algebra()
    }

    pub fn constant_part(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.constant_part()).collect()
    }

    pub fn eval(&self, delta: &[f64; NVARS]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(delta)).collect()
    }

    /// Degree-one coefficient block as a dense row-major matrix
    /// (rows = components, cols = variables).
    pub fn linear_block(&self) -> Vec<[f64; NVARS]> {
        self.components
            .iter()
            .map(|c| {
                let mut row = [0.0; NVARS];
                row.copy_from_slice(&c.coeffs[1..1 + NVARS]);
                row
            })
            .collect()
    }

    /// Jacobian at a concrete deviation: formal differentiation then
    /// evaluation, entry (r, v) = d component_r / d delta_v.
    pub fn jacobian_at(&self, delta: &[f64; NVARS]) -> Vec<[f64; NVARS]> {
        self.components
            .iter()
            .map(|c| {
                let mut row = [0.0; NVARS];
                for (v, entry) in row.iter_mut().enumerate() {
                    *entry = c.derivative(v).eval(delta);
                }
                row
            })
            .collect()
    }
}

/// Scalar interface shared by `f64` and [`TruncatedPoly`], so numeric code
/// such as the equations of motion can be written once for both.
pub trait DaScalar: Clone {
    /// A constant in the same algebra as `self`.
    fn lit(&self, c: f64) -> Self;
    fn constant_part(&self) -> f64;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn shift(&self, c: f64) -> Self;
    fn recip(&self) -> Result<Self, PolyError>;
    fn sqrt(&self) -> Result<Self, PolyError>;
    fn powf(&self, p: f64) -> Result<Self, PolyError>;
}

impl DaScalar for f64 {
    fn lit(&self, c: f64) -> Self {
        c
    }
    fn constant_part(&self) -> f64 {
        *self
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn shift(&self, c: f64) -> Self {
        self + c
    }
    fn recip(&self) -> Result<Self, PolyError> {
        if *self == 0.0 || !self.is_finite() {
            return Err(PolyError::Domain {
                func: "recip",
                constant: *self,
            });
        }
        Ok(1.0 / self)
    }
    fn sqrt(&self) -> Result<Self, PolyError> {
        if *self <= 0.0 || !self.is_finite() {
            return Err(PolyError::Domain {
                func: "sqrt",
                constant: *self,
            });
        }
        Ok(f64::sqrt(*self))
    }
    fn powf(&self, p: f64) -> Result<Self, PolyError> {
        if *self <= 0.0 || !self.is_finite() {
            return Err(PolyError::Domain {
                func: "powf",
                constant: *self,
            });
        }
        Ok(f64::powf(*self, p))
    }
}

impl DaScalar for TruncatedPoly {
    fn lit(&self, c: f64) -> Self {
        self.alg.constant(c)
    }
    fn constant_part(&self) -> f64 {
        TruncatedPoly::constant_part(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        TruncatedPoly::add(self, rhs)
    }
    fn sub(&self, rhs: &Self) -> Self {
        TruncatedPoly::sub(self, rhs)
    }
    fn mul(&self, rhs: &Self) -> Self {
        TruncatedPoly::mul(self, rhs)
    }
    fn scale(&self, k: f64) -> Self {
        TruncatedPoly::scale(self, k)
    }
    fn shift(&self, c: f64) -> Self {
        TruncatedPoly::shift(self, c)
    }
    fn recip(&self) -> Result<Self, PolyError> {
        TruncatedPoly::recip(self)
    }
    fn sqrt(&self) -> Result<Self, PolyError> {
        TruncatedPoly::sqrt(self)
    }
    fn powf(&self, p: f64) -> Result<Self, PolyError> {
        TruncatedPoly::powf(self, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_poly(alg: &Algebra, max_degree: usize, rng: &mut StdRng) -> TruncatedPoly {
        let mut p = alg.zero();
        for (r, idx) in alg.indices().iter().enumerate() {
            if idx.degree() <= max_degree {
                p.coeffs[r] = rng.gen_range(-1.0..1.0);
            }
        }
        p
    }

    fn random_int_poly(alg: &Algebra, max_degree: usize, rng: &mut StdRng) -> TruncatedPoly {
        let mut p = alg.zero();
        for (r, idx) in alg.indices().iter().enumerate() {
            if idx.degree() <= max_degree {
                p.coeffs[r] = rng.gen_range(-6i32..=6) as f64;
            }
        }
        p
    }

    fn random_delta(scale: f64, rng: &mut StdRng) -> [f64; NVARS] {
        let mut d = [0.0; NVARS];
        for v in d.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        d
    }

    #[test]
    fn dimension_at_order_five_is_462() {
        let alg = Algebra::new(5).unwrap();
        assert_eq!(alg.dim(), 462);
        assert_eq!(alg.degree_block(1).len(), 6);
        assert_eq!(alg.degree_block(5).len(), 252);
    }

    #[test]
    fn order_zero_and_oversized_rejected() {
        assert!(matches!(Algebra::new(0), Err(PolyError::BadOrder(0))));
        assert!(Algebra::new(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn add_combines_constants_and_variables() {
        let alg = Algebra::new(3).unwrap();
        // (1 + x1) + (2 + x2) = 3 + x1 + x2
        let p = alg.constant(1.0).add(&alg.variable(0));
        let q = alg.constant(2.0).add(&alg.variable(1));
        let s = p.add(&q);
        assert_eq!(s.constant_part(), 3.0);
        assert_eq!(s.coeff(MultiIndex([1, 0, 0, 0, 0, 0])), 1.0);
        assert_eq!(s.coeff(MultiIndex([0, 1, 0, 0, 0, 0])), 1.0);
    }

    #[test]
    fn additive_identity_and_inverse() {
        let mut rng = StdRng::seed_from_u64(7);
        let alg = Algebra::new(4).unwrap();
        let p = random_poly(&alg, 4, &mut rng);
        let z = p.add(&alg.zero());
        assert_eq!(z.coeffs(), p.coeffs());
        let s = p.add(&p.neg());
        assert!(s.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    #[should_panic(expected = "mixed truncation orders")]
    fn mixed_orders_rejected() {
        let a = Algebra::new(3).unwrap();
        let b = Algebra::new(4).unwrap();
        let _ = a.constant(1.0).add(&b.constant(1.0));
    }

    #[test]
    fn binomial_square_and_truncation() {
        let alg2 = Algebra::new(2).unwrap();
        let p = alg2.constant(1.0).add(&alg2.variable(0));
        let sq = p.mul(&p);
        assert_eq!(sq.constant_part(), 1.0);
        assert_eq!(sq.coeff(MultiIndex([1, 0, 0, 0, 0, 0])), 2.0);
        assert_eq!(sq.coeff(MultiIndex([2, 0, 0, 0, 0, 0])), 1.0);

        let alg1 = Algebra::new(1).unwrap();
        let p1 = alg1.constant(1.0).add(&alg1.variable(0));
        let sq1 = p1.mul(&p1);
        assert_eq!(sq1.constant_part(), 1.0);
        assert_eq!(sq1.coeff(MultiIndex([1, 0, 0, 0, 0, 0])), 2.0);
        assert_eq!(sq1.max_degree(), 1);
    }

    #[test]
    fn product_evaluation_exact_below_truncation() {
        // degree-2 factors at order 4: the product is degree 4, nothing is
        // truncated, so polynomial and scalar evaluation agree exactly.
        let mut rng = StdRng::seed_from_u64(42);
        let alg = Algebra::new(4).unwrap();
        for _ in 0..20 {
            let p = random_poly(&alg, 2, &mut rng);
            let q = random_poly(&alg, 2, &mut rng);
            let prod = p.mul(&q);
            let delta = random_delta(0.3, &mut rng);
            let lhs = prod.eval(&delta);
            let rhs = p.eval(&delta) * q.eval(&delta);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0),
                "lhs {lhs} rhs {rhs}"
            );
        }
    }

    #[test]
    fn ring_axioms_exact_on_integer_coefficients() {
        let mut rng = StdRng::seed_from_u64(3);
        let alg = Algebra::new(6).unwrap();
        for _ in 0..10 {
            let p = random_int_poly(&alg, 2, &mut rng);
            let q = random_int_poly(&alg, 2, &mut rng);
            let r = random_int_poly(&alg, 2, &mut rng);
            // commutativity
            assert_eq!(p.mul(&q).coeffs(), q.mul(&p).coeffs());
            // associativity (degree sum 6 = order, no truncation loss)
            assert_eq!(p.mul(&q).mul(&r).coeffs(), p.mul(&q.mul(&r)).coeffs());
            // distributivity
            assert_eq!(
                p.mul(&q.add(&r)).coeffs(),
                p.mul(&q).add(&p.mul(&r)).coeffs()
            );
        }
    }

    #[test]
    fn truncation_error_decays_at_order_n_plus_one() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 4;
        let alg = Algebra::new(n).unwrap();
        let p = random_poly(&alg, n, &mut rng);
        let q = random_poly(&alg, n, &mut rng);
        let prod = p.mul(&q);
        let dir = random_delta(1.0, &mut rng);
        let mut errs = Vec::new();
        let mut h = 0.5;
        for _ in 0..6 {
            let delta = dir.map(|d| d * h);
            let err = (prod.eval(&delta) - p.eval(&delta) * q.eval(&delta)).abs();
            errs.push(err);
            h *= 0.5;
        }
        // log-log slope over the 5 halvings must reach order n + 1
        let slope = ((errs[0] / errs[5]).ln() / 5.0) / 2f64.ln();
        assert!(slope >= n as f64 + 0.5, "observed slope {slope}");
    }

    #[test]
    fn asin_maclaurin_matches_reference() {
        // asin(x1) at order 3 = x1 + x1^3/6
        let alg = Algebra::new(3).unwrap();
        let a = alg.variable(0).asin().unwrap();
        assert_eq!(a.constant_part(), 0.0);
        assert!((a.coeff(MultiIndex([1, 0, 0, 0, 0, 0])) - 1.0).abs() < 1e-15);
        assert_eq!(a.coeff(MultiIndex([2, 0, 0, 0, 0, 0])), 0.0);
        assert!((a.coeff(MultiIndex([3, 0, 0, 0, 0, 0])) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn recip_geometric_series() {
        // 1/(2 + x1) at order 2 = 1/2 - x1/4 + x1^2/8
        let alg = Algebra::new(2).unwrap();
        let r = alg.constant(2.0).add(&alg.variable(0)).recip().unwrap();
        assert!((r.constant_part() - 0.5).abs() < 1e-15);
        assert!((r.coeff(MultiIndex([1, 0, 0, 0, 0, 0])) + 0.25).abs() < 1e-15);
        assert!((r.coeff(MultiIndex([2, 0, 0, 0, 0, 0])) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = StdRng::seed_from_u64(5);
        let alg = Algebra::new(5).unwrap();
        let mut p = alg.zero();
        for (r, idx) in alg.indices().iter().enumerate() {
            // degree-decaying coefficients, like a physical flow expansion
            p.coeffs[r] = rng.gen_range(-1.0..1.0) * 0.4f64.powi(idx.degree() as i32);
        }
        p.coeffs[0] = 1.5;
        let s = p.sqrt().unwrap();
        for _ in 0..50 {
            // deviations with 2-norm at most 0.05
            let raw = random_delta(1.0, &mut rng);
            let norm = raw.iter().map(|d| d * d).sum::<f64>().sqrt();
            let r = rng.gen_range(0.0..0.05);
            let delta = raw.map(|d| d * r / norm);
            let lhs = s.eval(&delta) * s.eval(&delta);
            let rhs = p.eval(&delta);
            assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn intrinsic_composition_error_decays() {
        // f(eval(p, d)) vs eval(f(p), d) decays at order n + 1 under halving.
        // Order 3 keeps the smallest errors well above the f64 floor.
        let mut rng = StdRng::seed_from_u64(19);
        let n = 3;
        let alg = Algebra::new(n).unwrap();
        for f in [
            Intrinsic::Recip,
            Intrinsic::Sqrt,
            Intrinsic::Asin,
            Intrinsic::Atan,
        ] {
            let mut p = random_poly(&alg, n, &mut rng);
            p.coeffs[0] = match f {
                Intrinsic::Asin => 0.4,
                _ => 1.5,
            };
            let fp = intrinsic(f, &p).unwrap();
            let dir = random_delta(1.0, &mut rng);
            let mut errs = Vec::new();
            let mut h = 0.1;
            for _ in 0..6 {
                let delta = dir.map(|d| d * h);
                let x = p.eval(&delta);
                let reference = match f {
                    Intrinsic::Recip => 1.0 / x,
                    Intrinsic::Sqrt => x.sqrt(),
                    Intrinsic::Asin => x.asin(),
                    Intrinsic::Atan => x.atan(),
                };
                errs.push((fp.eval(&delta) - reference).abs());
                h *= 0.5;
            }
            let slope = ((errs[0] / errs[5]).ln() / 5.0) / 2f64.ln();
            assert!(slope >= n as f64 + 0.5, "{f:?}: observed slope {slope}");
        }
    }

    #[test]
    fn intrinsic_domain_errors() {
        let alg = Algebra::new(3).unwrap();
        let zero = alg.zero();
        assert!(matches!(
            zero.recip(),
            Err(PolyError::Domain { func: "recip", .. })
        ));
        assert!(matches!(
            alg.constant(-1.0).sqrt(),
            Err(PolyError::Domain { func: "sqrt", .. })
        ));
        assert!(matches!(
            alg.constant(1.0).asin(),
            Err(PolyError::Domain { func: "asin", .. })
        ));
    }

    #[test]
    fn eval_basics() {
        let alg = Algebra::new(5).unwrap();
        assert_eq!(
            alg.constant(3.0).eval(&[9.0, -2.0, 0.3, 0.0, 1.0, 4.0]),
            3.0
        );
        // x1 + 2 x2^2 at (1, 0.5, ...)
        let mut p = alg.variable(0);
        p.set_coeff(MultiIndex([0, 2, 0, 0, 0, 0]), 2.0);
        assert_eq!(p.eval(&[1.0, 0.5, 0.0, 0.0, 0.0, 0.0]), 1.5);
        // at zero deviation only the constant survives
        let mut rng = StdRng::seed_from_u64(23);
        let q = random_poly(&alg, 5, &mut rng);
        assert_eq!(q.eval(&[0.0; NVARS]), q.constant_part());
    }

    #[test]
    fn jacobian_of_linear_map_is_its_coefficient_matrix() {
        let alg = Algebra::new(3).unwrap();
        let rows = vec![
            alg.variable(0).scale(2.0).add(&alg.variable(3).scale(-1.0)),
            alg.variable(1).shift(4.0),
        ];
        let map = PolyMap::new(rows);
        let jac = map.jacobian_at(&[0.7, -0.3, 0.1, 0.9, 0.0, 0.2]);
        let lin = map.linear_block();
        for (jr, lr) in jac.iter().zip(&lin) {
            for v in 0..NVARS {
                assert_eq!(jr[v], lr[v]);
            }
        }
    }

    #[test]
    fn jacobian_power_rule() {
        // d/dx1 of x1^2 at (a, 0, ...) = 2a
        let alg = Algebra::new(3).unwrap();
        let x = alg.variable(0);
        let map = PolyMap::new(vec![x.mul(&x)]);
        let a = 0.37;
        let jac = map.jacobian_at(&[a, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((jac[0][0] - 2.0 * a).abs() < 1e-15);
        for v in 1..NVARS {
            assert_eq!(jac[0][v], 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(31);
        let alg = Algebra::new(3).unwrap();
        for _ in 0..100 {
            let map = PolyMap::new(vec![
                random_poly(&alg, 3, &mut rng),
                random_poly(&alg, 3, &mut rng),
            ]);
            let delta = random_delta(0.2, &mut rng);
            let jac = map.jacobian_at(&delta);
            let h = 1e-6;
            for (r, comp) in map.components().iter().enumerate() {
                for v in 0..NVARS {
                    let mut dp = delta;
                    let mut dm = delta;
                    dp[v] += h;
                    dm[v] -= h;
                    let fd = (comp.eval(&dp) - comp.eval(&dm)) / (2.0 * h);
                    let scale = jac[r][v].abs().max(1.0);
                    assert!(
                        (jac[r][v] - fd).abs() <= 1e-6 * scale,
                        "row {r} var {v}: analytic {} fd {fd}",
                        jac[r][v]
                    );
                }
            }
        }
    }

    #[test]
    fn atan2_poly_quadrants() {
        let alg = Algebra::new(4).unwrap();
        let cases = [
            (1.0, 1.0),
            (-1.0, 1.0),
            (1.0, -1.0),
            (-1.0, -1.0),
            (0.3, -2.0),
            (2.0, 0.1),
            (-2.0, 0.1),
        ];
        for (y0, x0) in cases {
            let y = alg.constant(y0).add(&alg.variable(1).scale(0.2));
            let x = alg.constant(x0).add(&alg.variable(0).scale(0.2));
            let a = atan2_poly(&y, &x).unwrap();
            assert!(
                (a.constant_part() - y0.atan2(x0)).abs() < 1e-14,
                "constant part wrong for ({y0}, {x0})"
            );
            // check against scalar atan2 at a small deviation
            let delta = [0.05, -0.04, 0.0, 0.0, 0.0, 0.0];
            let ye = y.eval(&delta);
            let xe = x.eval(&delta);
            assert!((a.eval(&delta) - ye.atan2(xe)).abs() < 1e-8);
        }
    }

    #[test]
    fn debug_text_is_graded_lex_with_full_precision() {
        let alg = Algebra::new(2).unwrap();
        let p = alg
            .constant(0.1)
            .add(&alg.variable(5).scale(-3.0))
            .add(&alg.variable(0));
        let text = p.to_debug_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("0 0 0 0 0 0 "));
        assert!(lines[1].starts_with("1 0 0 0 0 0 "));
        assert!(lines[2].starts_with("0 0 0 0 0 1 "));
        let c: f64 = lines[0].rsplit(' ').next().unwrap().parse().unwrap();
        assert_eq!(c, 0.1);
    }
}
