//! Dense small-matrix numerics.
//!
//! The matrix exponential uses scaling and squaring with a diagonal Padé
//! approximant of degree 3, 5, 7, 9 or 13 chosen from the 1-norm (Higham 2005).
//! [`exp_and_integral`] evaluates the block exponential
//!
//! ```text
//! exp([[T, v w], [0, T]] y) = [[e^{Ty}, J(y)], [0, e^{Ty}]]
//! J(y) = ∫_0^y e^{T(y-u)} v w e^{Tu} du
//! ```
//!
//! without materialising the 2p×2p block: products of block upper-triangular
//! matrices with equal diagonal blocks stay in that form, so all arithmetic is
//! carried out on the (diagonal, corner) pair.

use crate::error::{NphError, Result};

/// Largest order accepted by any routine in this module.
pub const MAX_ORDER: usize = 64;

pub(crate) const THETA_3: f64 = 1.495_585_217_958_292e-2;
pub(crate) const THETA_5: f64 = 2.539_398_330_063_23e-1;
pub(crate) const THETA_7: f64 = 9.504_178_996_162_932e-1;
pub(crate) const THETA_9: f64 = 2.097_847_961_257_068;
pub(crate) const THETA_13: f64 = 5.371_920_351_148_152;

pub(crate) const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
pub(crate) const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
pub(crate) const PADE_7: [f64; 8] = [17_297_280.0, 8_648_640.0, 1_995_840.0, 277_200.0, 25_200.0, 1_512.0, 56.0, 1.0];
pub(crate) const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
pub(crate) const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Square matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(order: usize) -> Self {
        Self { order, data: vec![0.0; order * order] }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.data[i * order + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(order: usize, data: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(NphError::InvalidInput("matrix order must be at least 1".into()));
        }
        if order > MAX_ORDER {
            return Err(NphError::InvalidInput(format!("matrix order {order} exceeds the cap of {MAX_ORDER}")));
        }
        if data.len() != order * order {
            return Err(NphError::InvalidInput(format!("{} entries cannot form a {order}x{order} matrix", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NphError::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { order, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let order = rows.len();
        if rows.iter().any(|r| r.len() != order) {
            return Err(NphError::InvalidInput("matrix rows are not square".into()));
        }
        Self::from_row_major(order, rows.concat())
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.order + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.order).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { order: self.order, data: self.data.iter().map(|x| x * factor).collect() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.order;
        debug_assert_eq!(n, other.order);
        let mut out = vec![0.0; n * n];
        matmul_into(n, &self.data, &other.data, &mut out);
        Self { order: n, data: out }
    }

    /// `M v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.order).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `w M` for a row vector `w`.
    pub fn vec_mul(&self, w: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n];
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(&self.data[k * n..(k + 1) * n]) {
                *o += wk * m;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let n = self.order;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let n = self.order;
        (0..n).map(|j| (0..n).map(|i| self.data[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    fn scale_in_place(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn lu(&self) -> Result<Lu> {
        Lu::factor(self)
    }
}

/// `out += a b` for row-major order-`N` matrices, fully unrolled by the compiler.
#[inline(always)]
fn matmul_fixed<const N: usize>(a: &[f64], b: &[f64], out: &mut [f64]) {
    let (a, b, out) = (&a[..N * N], &b[..N * N], &mut out[..N * N]);
    for i in 0..N {
        for k in 0..N {
            let aik = a[i * N + k];
            for j in 0..N {
                out[i * N + j] += aik * b[k * N + j];
            }
        }
    }
}

/// `out = a b`.
fn matmul_into(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    matmul_acc(n, a, b, out);
}

/// `out += a b`; small orders dispatch to unrolled kernels, which dominate
/// the cost of the E-step.
pub(crate) fn matmul_acc(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    match n {
        1 => out[0] += a[0] * b[0],
        2 => matmul_fixed::<2>(a, b, out),
        3 => matmul_fixed::<3>(a, b, out),
        4 => matmul_fixed::<4>(a, b, out),
        5 => matmul_fixed::<5>(a, b, out),
        6 => matmul_fixed::<6>(a, b, out),
        7 => matmul_fixed::<7>(a, b, out),
        8 => matmul_fixed::<8>(a, b, out),
        _ => {
            for i in 0..n {
                let row = &mut out[i * n..(i + 1) * n];
                for k in 0..n {
                    let aik = a[i * n + k];
                    if aik == 0.0 {
                        continue;
                    }
                    for (r, bkj) in row.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                        *r += aik * bkj;
                    }
                }
            }
        }
    }
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(m: &SquareMatrix) -> Result<Self> {
        let n = m.order;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot_row, pivot_abs) =
                (col..n)
                    .map(|r| (r, lu[r * n + col].abs()))
                    .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 || !pivot_abs.is_finite() {
                return Err(NphError::InvalidInput("singular matrix".into()));
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let factor = lu[r * n + col] / pivot;
                lu[r * n + col] = factor;
                if factor != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= factor * lu[col * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.lu[i * n + k] * x[k]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| self.lu[i * n + k] * x[k]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves `A X = B`, sweeping whole rows of `X` at once.
    pub fn solve_mat(&self, b: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut x = vec![0.0; n * n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[i * n..(i + 1) * n].copy_from_slice(&b.data[p * n..(p + 1) * n]);
        }
        for i in 0..n {
            let (done, rest) = x.split_at_mut(i * n);
            let row = &mut rest[..n];
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l != 0.0 {
                    for (r, v) in row.iter_mut().zip(&done[k * n..(k + 1) * n]) {
                        *r -= l * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            let (head, tail) = x.split_at_mut((i + 1) * n);
            let row = &mut head[i * n..];
            for k in i + 1..n {
                let u = self.lu[i * n + k];
                if u != 0.0 {
                    for (r, v) in row.iter_mut().zip(&tail[(k - i - 1) * n..(k - i) * n]) {
                        *r -= u * v;
                    }
                }
            }
            let d = self.lu[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
        }
        SquareMatrix { order: n, data: x }
    }
}

/// Arithmetic needed by the Padé scaling-and-squaring kernel.
trait ExpAlgebra: Clone {
    fn identity_like(&self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
    fn norm1(&self) -> f64;
    fn max_abs(&self) -> f64;
    fn all_finite(&self) -> bool;
    /// `den^{-1} num`
    fn solve(den: &Self, num: &Self) -> Result<Self>;
}

impl ExpAlgebra for SquareMatrix {
    fn identity_like(&self) -> Self {
        SquareMatrix::identity(self.order)
    }
    fn mul(&self, other: &Self) -> Self {
        self.matmul(other)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        SquareMatrix::axpy(self, a, x)
    }
    fn scale(&mut self, a: f64) {
        self.scale_in_place(a)
    }
    fn norm1(&self) -> f64 {
        SquareMatrix::norm1(self)
    }
    fn max_abs(&self) -> f64 {
        SquareMatrix::max_abs(self)
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    fn solve(den: &Self, num: &Self) -> Result<Self> {
        Ok(den.lu()?.solve_mat(num))
    }
}

/// Block upper-triangular matrix `[[D, C], [0, D]]`.
#[derive(Clone, Debug)]
struct BlockPair {
    diag: SquareMatrix,
    corner: SquareMatrix,
}

impl ExpAlgebra for BlockPair {
    fn identity_like(&self) -> Self {
        let n = self.diag.order;
        BlockPair { diag: SquareMatrix::identity(n), corner: SquareMatrix::zeros(n) }
    }
    fn mul(&self, other: &Self) -> Self {
        let n = self.diag.order;
        let mut corner = SquareMatrix::zeros(n);
        matmul_acc(n, &self.diag.data, &other.corner.data, &mut corner.data);
        matmul_acc(n, &self.corner.data, &other.diag.data, &mut corner.data);
        BlockPair { diag: self.diag.matmul(&other.diag), corner }
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.diag.axpy(a, &x.diag);
        self.corner.axpy(a, &x.corner);
    }
    fn scale(&mut self, a: f64) {
        self.diag.scale_in_place(a);
        self.corner.scale_in_place(a);
    }
    fn norm1(&self) -> f64 {
        let n = self.diag.order;
        let col = |m: &SquareMatrix, j: usize| (0..n).map(|i| m.get(i, j).abs()).sum::<f64>();
        (0..n)
            .map(|j| {
                let d = col(&self.diag, j);
                d.max(d + col(&self.corner, j))
            })
            .fold(0.0, f64::max)
    }
    fn max_abs(&self) -> f64 {
        self.diag.max_abs().max(self.corner.max_abs())
    }
    fn all_finite(&self) -> bool {
        self.diag.is_finite() && self.corner.is_finite()
    }
    fn solve(den: &Self, num: &Self) -> Result<Self> {
        let lu = den.diag.lu()?;
        let diag = lu.solve_mat(&num.diag);
        let mut rhs = num.corner.clone();
        rhs.axpy(-1.0, &den.corner.matmul(&diag));
        Ok(BlockPair { diag, corner: lu.solve_mat(&rhs) })
    }
}

/// Odd/even split `U`, `V` of a degree-m Padé approximant (m ≤ 9).
fn pade_low<A: ExpAlgebra>(a: &A, coeffs: &[f64]) -> (A, A) {
    let eye = a.identity_like();
    let a2 = a.mul(a);
    let m = coeffs.len() - 1;
    let mut powers = vec![eye.clone(), a2.clone()];
    while 2 * (powers.len() - 1) < m - 1 {
        let next = powers.last().unwrap().mul(&a2);
        powers.push(next);
    }
    let mut u_inner = eye.clone();
    u_inner.scale(coeffs[1]);
    let mut v = eye;
    v.scale(coeffs[0]);
    for (k, pk) in powers.iter().enumerate().skip(1) {
        u_inner.axpy(coeffs[2 * k + 1], pk);
        v.axpy(coeffs[2 * k], pk);
    }
    (a.mul(&u_inner), v)
}

fn pade_13<A: ExpAlgebra>(a: &A) -> (A, A) {
    let b = &PADE_13;
    let eye = a.identity_like();
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a2.mul(&a4);

    let mut w1 = a6.clone();
    w1.scale(b[13]);
    w1.axpy(b[11], &a4);
    w1.axpy(b[9], &a2);
    let mut w2 = w1.mul(&a6);
    w2.axpy(b[7], &a6);
    w2.axpy(b[5], &a4);
    w2.axpy(b[3], &a2);
    w2.axpy(b[1], &eye);
    let u = a.mul(&w2);

    let mut z1 = a6.clone();
    z1.scale(b[12]);
    z1.axpy(b[10], &a4);
    z1.axpy(b[8], &a2);
    let mut v = z1.mul(&a6);
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &eye);
    (u, v)
}

/// Binary exponent `e` with `2^e <= x < 2^{e+1}` for finite positive `x`.
pub(crate) fn binary_exponent(x: f64) -> i64 {
    x.log2().floor() as i64
}

/// `x * 2^e` without intermediate overflow of the power.
pub(crate) fn scale_pow2(mut x: f64, mut e: i64) -> f64 {
    // |x| < 2^1024, so beyond these shifts the result is 0 or infinite
    if e < -2200 {
        return 0.0 * x;
    }
    if e > 2200 && x != 0.0 {
        return x * f64::INFINITY;
    }
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// Returns `(M, e)` with `exp(a) = M · 2^e`.
///
/// During the squaring phase `M` is renormalised by exact powers of two, so
/// results far below the underflow threshold keep full relative precision.
fn exp_scaled<A: ExpAlgebra>(a: &A) -> Result<(A, i64)> {
    if !a.all_finite() {
        return Err(NphError::InvalidInput("matrix has non-finite entries".into()));
    }
    let norm = a.norm1();
    let low: [(f64, &[f64]); 4] = [(THETA_3, &PADE_3), (THETA_5, &PADE_5), (THETA_7, &PADE_7), (THETA_9, &PADE_9)];
    for (theta, coeffs) in low {
        if norm <= theta {
            let (u, v) = pade_low(a, coeffs);
            return Ok((rational(&u, v)?, 0));
        }
    }
    let squarings = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let mut scaled = a.clone();
    scaled.scale(2f64.powi(-squarings));
    let (u, v) = pade_13(&scaled);
    let mut result = rational(&u, v)?;
    let mut exponent: i64 = 0;
    for _ in 0..squarings {
        result = result.mul(&result);
        exponent *= 2;
        let peak = result.max_abs();
        if !peak.is_finite() {
            return Err(NphError::NumericOverflow("matrix exponential"));
        }
        if peak > 0.0 && !(2f64.powi(-500)..=2f64.powi(500)).contains(&peak) {
            let shift = binary_exponent(peak);
            result.scale(2f64.powi(-shift as i32));
            exponent += shift;
        }
    }
    Ok((result, exponent))
}

/// `(V - U)^{-1} (V + U)`
fn rational<A: ExpAlgebra>(u: &A, mut v: A) -> Result<A> {
    let mut den = v.clone();
    den.axpy(-1.0, u);
    v.axpy(1.0, u);
    A::solve(&den, &v)
}

fn unscale(mut m: SquareMatrix, exponent: i64) -> Result<SquareMatrix> {
    if exponent != 0 {
        m.data.iter_mut().for_each(|x| *x = scale_pow2(*x, exponent));
    }
    if !m.is_finite() {
        return Err(NphError::NumericOverflow("matrix exponential"));
    }
    Ok(m)
}

/// `e^A`.
pub fn mat_exp(a: &SquareMatrix) -> Result<SquareMatrix> {
    let (m, e) = exp_scaled(a)?;
    unscale(m, e)
}

/// `e^A` as `(M, e)` with `e^A = M · 2^e`; never underflows.
pub fn mat_exp_scaled(a: &SquareMatrix) -> Result<(SquareMatrix, i64)> {
    exp_scaled(a)
}

/// Blocks of the Van Loan exponential, sharing one power-of-two scale.
#[derive(Clone, Debug)]
pub struct ExpIntegral {
    /// `e^{Ty} · 2^{-exponent}`
    pub exp: SquareMatrix,
    /// `J(y) · 2^{-exponent}`
    pub integral: SquareMatrix,
    pub exponent: i64,
}

fn check_van_loan_inputs(t: &SquareMatrix, v: &[f64], w: &[f64], y: f64) -> Result<()> {
    let p = t.order();
    if 2 * p > MAX_ORDER {
        return Err(NphError::InvalidInput(format!(
            "Van Loan block of order {} exceeds the cap of {MAX_ORDER}",
            2 * p
        )));
    }
    if v.len() != p || w.len() != p {
        return Err(NphError::InvalidInput(format!(
            "vector lengths {} and {} do not match matrix order {p}",
            v.len(),
            w.len()
        )));
    }
    if !(y >= 0.0) || !y.is_finite() {
        return Err(NphError::InvalidInput(format!("argument y = {y} must be finite and nonnegative")));
    }
    Ok(())
}

/// Scaled form of [`exp_and_integral`]; used where `e^{Ty}` may underflow.
pub fn exp_and_integral_scaled(t: &SquareMatrix, v: &[f64], w: &[f64], y: f64) -> Result<ExpIntegral> {
    check_van_loan_inputs(t, v, w, y)?;
    let p = t.order();
    let mut corner = SquareMatrix::zeros(p);
    for i in 0..p {
        for j in 0..p {
            corner.data[i * p + j] = v[i] * w[j] * y;
        }
    }
    let block = BlockPair { diag: t.scaled(y), corner };
    let (m, exponent) = exp_scaled(&block)?;
    Ok(ExpIntegral { exp: m.diag, integral: m.corner, exponent })
}

/// `(e^{Ty}, ∫_0^y e^{T(y-u)} v w e^{Tu} du)` from one block exponential.
pub fn exp_and_integral(t: &SquareMatrix, v: &[f64], w: &[f64], y: f64) -> Result<(SquareMatrix, SquareMatrix)> {
    let r = exp_and_integral_scaled(t, v, w, y)?;
    Ok((unscale(r.exp, r.exponent)?, unscale(r.integral, r.exponent)?))
}

/// The dense 2p×2p block `[[T, v w], [0, T]]`.
pub fn van_loan_block(t: &SquareMatrix, v: &[f64], w: &[f64]) -> Result<SquareMatrix> {
    check_van_loan_inputs(t, v, w, 0.0)?;
    let p = t.order();
    let n = 2 * p;
    let mut block = SquareMatrix::zeros(n);
    for i in 0..p {
        for j in 0..p {
            block.data[i * n + j] = t.get(i, j);
            block.data[(i + p) * n + j + p] = t.get(i, j);
            block.data[i * n + j + p] = v[i] * w[j];
        }
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nphfit_oracle::quad::integrate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn max_diff(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    }

    fn random_subintensity(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> SquareMatrix {
        let mut t = SquareMatrix::zeros(p);
        for i in 0..p {
            let mut row = 0.0;
            for j in 0..p {
                if i != j {
                    let v = rng.random::<f64>() * scale;
                    t.set(i, j, v);
                    row += v;
                }
            }
            t.set(i, i, -(row + rng.random::<f64>() * scale + 1e-3));
        }
        t
    }

    #[test]
    fn exp_of_zero_is_identity() {
        for n in 1..6 {
            let e = mat_exp(&SquareMatrix::zeros(n)).unwrap();
            assert!(max_diff(&e, &SquareMatrix::identity(n)) < 1e-14);
        }
    }

    #[test]
    fn scalar_and_nilpotent_cases() {
        let e = mat_exp(&m(&[&[-1.0]])).unwrap();
        assert!((e.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);

        let e = mat_exp(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!(max_diff(&e, &m(&[&[1.0, 1.0], &[0.0, 1.0]])) < 1e-15);

        let e = mat_exp(&m(&[&[-40.0]])).unwrap();
        assert!(((e.get(0, 0) - (-40.0f64).exp()) / (-40.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn overflow_and_bad_input_are_errors() {
        assert!(matches!(mat_exp(&SquareMatrix { order: 1, data: vec![1000.0] }), Err(NphError::NumericOverflow(_))));
        assert!(matches!(mat_exp(&SquareMatrix { order: 1, data: vec![f64::NAN] }), Err(NphError::InvalidInput(_))));
        assert!(SquareMatrix::from_row_major(65, vec![0.0; 65 * 65]).is_err());
    }

    #[test]
    fn scaled_exponential_survives_underflow() {
        let a = m(&[&[-2000.0, 1000.0], &[0.0, -1500.0]]);
        let (s, e) = mat_exp_scaled(&a).unwrap();
        // entry (1,1) is e^{-1500}
        let log_val = s.get(1, 1).ln() + e as f64 * std::f64::consts::LN_2;
        assert!((log_val + 1500.0).abs() < 1e-9, "{log_val}");
        assert_eq!(mat_exp(&a).unwrap().get(1, 1), 0.0);
    }

    #[test]
    fn van_loan_zero_argument() {
        let t = m(&[&[-2.0, 1.0], &[0.5, -1.0]]);
        let (e, j) = exp_and_integral(&t, &[1.0, 0.5], &[0.3, 0.7], 0.0).unwrap();
        assert!(max_diff(&e, &SquareMatrix::identity(2)) < 1e-15);
        assert!(j.max_abs() < 1e-15);
    }

    #[test]
    fn van_loan_scalar_closed_form() {
        let t = m(&[&[-1.0]]);
        let (e, j) = exp_and_integral(&t, &[1.0], &[1.0], 1.0).unwrap();
        let expected = (-1.0f64).exp();
        assert!((e.get(0, 0) - expected).abs() < 1e-15);
        // ∫_0^y e^{-(y-u)} e^{-u} du = y e^{-y}
        assert!((j.get(0, 0) - expected).abs() < 1e-15);
        let oracle = integrate(|_u| (-1.0f64).exp(), 0.0, 1.0, 1e-12);
        assert!((j.get(0, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn van_loan_erlang_against_quadrature() {
        // Erlang(2, 1): t = (0, 1), alpha = (1, 0)
        let t = m(&[&[-1.0, 1.0], &[0.0, -1.0]]);
        let exit = [0.0, 1.0];
        let alpha = [1.0, 0.0];
        let (_, j) = exp_and_integral(&t, &exit, &alpha, 1.0).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let oracle = integrate(
                    |u| {
                        let left = mat_exp(&t.scaled(1.0 - u)).unwrap().mul_vec(&exit);
                        let right = mat_exp(&t.scaled(u)).unwrap().vec_mul(&alpha);
                        left[r] * right[c]
                    },
                    0.0,
                    1.0,
                    1e-12,
                );
                assert!((j.get(r, c) - oracle).abs() < 1e-10, "({r},{c}) {} vs {oracle}", j.get(r, c));
            }
        }
        // closed forms: J_{21} = ∫ e^{-(1-u)} e^{-u} du = e^{-1}
        assert!((j.get(1, 0) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn block_pair_matches_dense_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=6 {
            for &y in &[0.01, 0.7, 3.0, 25.0] {
                let t = random_subintensity(&mut rng, p, 2.0);
                let v: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
                let w: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
                let (e, j) = exp_and_integral(&t, &v, &w, y).unwrap();
                let dense = mat_exp(&van_loan_block(&t, &v, &w).unwrap().scaled(y)).unwrap();
                let n = 2 * p;
                for r in 0..p {
                    for c in 0..p {
                        assert!((e.get(r, c) - dense.get(r, c)).abs() < 1e-13);
                        assert!((j.get(r, c) - dense.get(r, c + p)).abs() < 1e-13);
                        assert!(dense.get(r + p, c).abs() < 1e-300 || n == 0);
                    }
                }
            }
        }
    }

    #[test]
    fn sub_stochastic_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = rng.random_range(1..=6);
            let t = random_subintensity(&mut rng, p, 3.0);
            let y = rng.random::<f64>() * 20.0;
            let e = mat_exp(&t.scaled(y)).unwrap();
            for i in 0..p {
                let row: f64 = e.row(i).iter().sum();
                assert!((-1e-12..=1.0 + 1e-12).contains(&row));
                for &x in e.row(i) {
                    assert!((-1e-12..=1.0 + 1e-12).contains(&x));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup_property(seed in 0u64..10_000, p in 1usize..=8, s in -10.0f64..10.0, t in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // scale so |s+t|·‖A‖ stays moderate; A is stable (sub-intensity)
            let a = random_subintensity(&mut rng, p, 0.2);
            let lhs = mat_exp(&a.scaled(s + t)).unwrap();
            let rhs = mat_exp(&a.scaled(s)).unwrap().matmul(&mat_exp(&a.scaled(t)).unwrap());
            let tol = 1e-10 * lhs.max_abs().max(1.0);
            prop_assert!(max_diff(&lhs, &rhs) < tol, "{} vs tol {}", max_diff(&lhs, &rhs), tol);
        }
    }
}
