//! Allocation-free evaluation of the block exponential
//! `exp([[T, v w], [0, T]] x)` for repeated use with one `T`.
//!
//! Same algorithm as [`crate::matrix::exp_and_integral_scaled`], with every
//! intermediate held in buffers owned by the workspace.

use crate::error::{NphError, Result};
use crate::matrix::{
    binary_exponent, matmul_acc, SquareMatrix, PADE_13, PADE_3, PADE_5, PADE_7, PADE_9, THETA_13, THETA_3, THETA_5,
    THETA_7, THETA_9,
};

/// Diagonal and corner blocks of a block upper-triangular matrix.
#[derive(Clone, Debug)]
struct Pair {
    d: Vec<f64>,
    c: Vec<f64>,
}

impl Pair {
    fn zeros(n: usize) -> Self {
        Self { d: vec![0.0; n * n], c: vec![0.0; n * n] }
    }

    fn set_identity(&mut self, n: usize, scale: f64) {
        self.d.fill(0.0);
        self.c.fill(0.0);
        for i in 0..n {
            self.d[i * n + i] = scale;
        }
    }

    fn axpy(&mut self, a: f64, x: &Pair) {
        for (s, v) in self.d.iter_mut().zip(&x.d) {
            *s += a * v;
        }
        for (s, v) in self.c.iter_mut().zip(&x.c) {
            *s += a * v;
        }
    }

    fn scale(&mut self, a: f64) {
        self.d.iter_mut().chain(self.c.iter_mut()).for_each(|x| *x *= a);
    }

    fn max_abs(&self) -> f64 {
        self.d.iter().chain(&self.c).fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `out = x y` in block form.
fn block_mul(n: usize, x: &Pair, y: &Pair, out: &mut Pair) {
    out.d.fill(0.0);
    out.c.fill(0.0);
    matmul_acc(n, &x.d, &y.d, &mut out.d);
    matmul_acc(n, &x.d, &y.c, &mut out.c);
    matmul_acc(n, &x.c, &y.d, &mut out.c);
}

/// Reusable buffers for one matrix order.
#[derive(Clone, Debug)]
pub(crate) struct VanLoan {
    n: usize,
    a: Pair,
    a2: Pair,
    a4: Pair,
    a6: Pair,
    a8: Pair,
    u: Pair,
    v: Pair,
    t1: Pair,
    r: Pair,
    lu: Vec<f64>,
    perm: Vec<usize>,
    exponent: i64,
}

impl VanLoan {
    pub(crate) fn new(n: usize) -> Self {
        let z = Pair::zeros(n);
        Self {
            n,
            a: z.clone(),
            a2: z.clone(),
            a4: z.clone(),
            a6: z.clone(),
            a8: z.clone(),
            u: z.clone(),
            v: z.clone(),
            t1: z.clone(),
            r: z,
            lu: vec![0.0; n * n],
            perm: (0..n).collect(),
            exponent: 0,
        }
    }

    /// `e^{Tx}` scaled by `2^{-exponent}`, row-major.
    pub(crate) fn exp(&self) -> &[f64] {
        &self.r.d
    }

    /// `J(x) = ∫_0^x e^{T(x-u)} v w e^{Tu} du` scaled by `2^{-exponent}`.
    pub(crate) fn integral(&self) -> &[f64] {
        &self.r.c
    }

    pub(crate) fn exponent(&self) -> i64 {
        self.exponent
    }

    pub(crate) fn compute(&mut self, t: &SquareMatrix, v: &[f64], w: &[f64], x: f64) -> Result<()> {
        let n = self.n;
        debug_assert!(t.order() == n && v.len() == n && w.len() == n);
        if !(x >= 0.0) || !x.is_finite() {
            return Err(NphError::InvalidInput(format!("argument y = {x} must be finite and nonnegative")));
        }
        for (dst, src) in self.a.d.iter_mut().zip(t.as_slice()) {
            *dst = src * x;
        }
        for i in 0..n {
            for j in 0..n {
                self.a.c[i * n + j] = v[i] * w[j] * x;
            }
        }
        if !self.a.d.iter().chain(&self.a.c).all(|z| z.is_finite()) {
            return Err(NphError::InvalidInput("matrix has non-finite entries".into()));
        }
        let norm = (0..n)
            .map(|j| {
                let col = |m: &[f64]| (0..n).map(|i| m[i * n + j].abs()).sum::<f64>();
                let d = col(&self.a.d);
                d + col(&self.a.c)
            })
            .fold(0.0, f64::max);

        let low: [(f64, &[f64]); 4] = [(THETA_3, &PADE_3), (THETA_5, &PADE_5), (THETA_7, &PADE_7), (THETA_9, &PADE_9)];
        let mut squarings = 0;
        match low.iter().find(|(theta, _)| norm <= *theta) {
            Some(&(_, coeffs)) => self.pade_low(coeffs),
            None => {
                squarings = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
                self.a.scale(2f64.powi(-squarings));
                self.pade_13();
            }
        }
        self.rational()?;
        self.exponent = 0;
        for _ in 0..squarings {
            block_mul(n, &self.r, &self.r, &mut self.t1);
            std::mem::swap(&mut self.r, &mut self.t1);
            self.exponent *= 2;
            let peak = self.r.max_abs();
            if !peak.is_finite() {
                return Err(NphError::NumericOverflow("matrix exponential"));
            }
            if peak > 0.0 && !(2f64.powi(-500)..=2f64.powi(500)).contains(&peak) {
                let shift = binary_exponent(peak);
                self.r.scale(2f64.powi(-shift as i32));
                self.exponent += shift;
            }
        }
        Ok(())
    }

    fn pade_low(&mut self, c: &[f64]) {
        let n = self.n;
        let m = c.len() - 1;
        block_mul(n, &self.a, &self.a, &mut self.a2);
        // t1 holds the odd inner sum, v the even sum
        self.t1.set_identity(n, c[1]);
        self.v.set_identity(n, c[0]);
        self.t1.axpy(c[3], &self.a2);
        self.v.axpy(c[2], &self.a2);
        if m >= 5 {
            block_mul(n, &self.a2, &self.a2, &mut self.a4);
            self.t1.axpy(c[5], &self.a4);
            self.v.axpy(c[4], &self.a4);
        }
        if m >= 7 {
            block_mul(n, &self.a2, &self.a4, &mut self.a6);
            self.t1.axpy(c[7], &self.a6);
            self.v.axpy(c[6], &self.a6);
        }
        if m >= 9 {
            block_mul(n, &self.a4, &self.a4, &mut self.a8);
            self.t1.axpy(c[9], &self.a8);
            self.v.axpy(c[8], &self.a8);
        }
        block_mul(n, &self.a, &self.t1, &mut self.u);
    }

    fn pade_13(&mut self) {
        let n = self.n;
        let b = &PADE_13;
        block_mul(n, &self.a, &self.a, &mut self.a2);
        block_mul(n, &self.a2, &self.a2, &mut self.a4);
        block_mul(n, &self.a2, &self.a4, &mut self.a6);

        self.t1.set_identity(n, 0.0);
        self.t1.axpy(b[13], &self.a6);
        self.t1.axpy(b[11], &self.a4);
        self.t1.axpy(b[9], &self.a2);
        block_mul(n, &self.t1, &self.a6, &mut self.v);
        self.v.axpy(b[7], &self.a6);
        self.v.axpy(b[5], &self.a4);
        self.v.axpy(b[3], &self.a2);
        for i in 0..n {
            self.v.d[i * n + i] += b[1];
        }
        block_mul(n, &self.a, &self.v, &mut self.u);

        self.t1.set_identity(n, 0.0);
        self.t1.axpy(b[12], &self.a6);
        self.t1.axpy(b[10], &self.a4);
        self.t1.axpy(b[8], &self.a2);
        block_mul(n, &self.t1, &self.a6, &mut self.v);
        self.v.axpy(b[6], &self.a6);
        self.v.axpy(b[4], &self.a4);
        self.v.axpy(b[2], &self.a2);
        for i in 0..n {
            self.v.d[i * n + i] += b[0];
        }
    }

    /// `r = (V - U)^{-1} (V + U)` in block form.
    fn rational(&mut self) -> Result<()> {
        let n = self.n;
        // t1 = V - U, v = V + U
        self.t1.d.copy_from_slice(&self.v.d);
        self.t1.c.copy_from_slice(&self.v.c);
        self.t1.axpy(-1.0, &self.u);
        self.v.axpy(1.0, &self.u);
        self.factor()?;
        let (lu, perm) = (&self.lu, &self.perm);
        lu_solve_rows(n, lu, perm, &self.v.d, &mut self.r.d);
        // corner: D^{-1} (N_c - D_c X_d), with u.d as scratch
        self.u.d.fill(0.0);
        matmul_acc(n, &self.t1.c, &self.r.d, &mut self.u.d);
        for (s, p) in self.v.c.iter_mut().zip(&self.u.d) {
            *s -= p;
        }
        lu_solve_rows(n, lu, perm, &self.v.c, &mut self.r.c);
        Ok(())
    }

    /// LU with partial pivoting of `t1.d` into `lu`.
    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let lu = &mut self.lu;
        lu.copy_from_slice(&self.t1.d);
        for (i, p) in self.perm.iter_mut().enumerate() {
            *p = i;
        }
        for col in 0..n {
            let (mut pivot_row, mut pivot_abs) = (col, -1.0);
            for r in col..n {
                let a = lu[r * n + col].abs();
                if a > pivot_abs {
                    pivot_row = r;
                    pivot_abs = a;
                }
            }
            if pivot_abs == 0.0 || !pivot_abs.is_finite() {
                return Err(NphError::InvalidInput("singular matrix".into()));
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                self.perm.swap(col, pivot_row);
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
        Ok(())
    }
}

/// Solves `A X = B` for all columns at once from a packed LU of `A`.
fn lu_solve_rows(n: usize, lu: &[f64], perm: &[usize], b: &[f64], x: &mut [f64]) {
    match n {
        2 => lu_solve_fixed::<2>(lu, perm, b, x),
        3 => lu_solve_fixed::<3>(lu, perm, b, x),
        4 => lu_solve_fixed::<4>(lu, perm, b, x),
        5 => lu_solve_fixed::<5>(lu, perm, b, x),
        6 => lu_solve_fixed::<6>(lu, perm, b, x),
        7 => lu_solve_fixed::<7>(lu, perm, b, x),
        8 => lu_solve_fixed::<8>(lu, perm, b, x),
        _ => lu_solve_any(n, lu, perm, b, x),
    }
}

#[inline(always)]
fn lu_solve_fixed<const N: usize>(lu: &[f64], perm: &[usize], b: &[f64], x: &mut [f64]) {
    let (lu, perm, x) = (&lu[..N * N], &perm[..N], &mut x[..N * N]);
    for i in 0..N {
        let p = perm[i];
        x[i * N..(i + 1) * N].copy_from_slice(&b[p * N..(p + 1) * N]);
    }
    for i in 0..N {
        for k in 0..i {
            let l = lu[i * N + k];
            for j in 0..N {
                x[i * N + j] -= l * x[k * N + j];
            }
        }
    }
    for i in (0..N).rev() {
        for k in i + 1..N {
            let u = lu[i * N + k];
            for j in 0..N {
                x[i * N + j] -= u * x[k * N + j];
            }
        }
        let d = 1.0 / lu[i * N + i];
        for j in 0..N {
            x[i * N + j] *= d;
        }
    }
}

fn lu_solve_any(n: usize, lu: &[f64], perm: &[usize], b: &[f64], x: &mut [f64]) {
    for (i, &p) in perm.iter().enumerate() {
        x[i * n..(i + 1) * n].copy_from_slice(&b[p * n..(p + 1) * n]);
    }
    for i in 0..n {
        let (done, rest) = x.split_at_mut(i * n);
        let row = &mut rest[..n];
        for k in 0..i {
            let l = lu[i * n + k];
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
            let u = lu[i * n + k];
            if u != 0.0 {
                for (r, v) in row.iter_mut().zip(&tail[(k - i - 1) * n..(k - i) * n]) {
                    *r -= u * v;
                }
            }
        }
        let d = lu[i * n + i];
        row.iter_mut().for_each(|r| *r /= d);
    }
}
