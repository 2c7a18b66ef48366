//! Dense row-major `f64` kernels.
//!
//! Every reduction runs left to right over the contracted index so repeated
//! runs are bit-identical. Sizes are desk scale; nothing here is blocked or
//! vectorised beyond what the compiler does on its own.

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MemError, Result};

/// Dense vector. Dereferences to `[f64]`.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    /// Unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Vector {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / n)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("Mat::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(shape_err("Mat::from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vector]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, |v| v.dim());
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            if col.dim() != r {
                return Err(shape_err("Mat::from_columns", r, col.dim()));
            }
            for i in 0..r {
                m.data[i * c + j] = col[i];
            }
        }
        Ok(m)
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, ui) in u.iter().enumerate() {
            let row = &mut m.data[i * v.len()..(i + 1) * v.len()];
            for (dst, vj) in row.iter_mut().zip(v) {
                *dst = ui * vj;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector::new((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · b`, accumulating each output element over the inner index in order.
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.rows {
            return Err(shape_err(
                "matmul",
                format!("lhs.cols == rhs.rows ({})", self.cols),
                b.rows,
            ));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(shape_err("matvec", self.cols, x.len()));
        }
        Ok(Vector::new(
            (0..self.rows).map(|r| dot(self.row(r), x)).collect(),
        ))
    }

    /// `selfᵀ · x`.
    pub fn tmatvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(shape_err("tmatvec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        Ok(Vector::new(out))
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "axpy",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    /// `self += a · u vᵀ` without materialising the outer product.
    pub fn add_outer(&mut self, a: f64, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(shape_err(
                "add_outer",
                format!("{:?}", self.shape()),
                format!("({}, {})", u.len(), v.len()),
            ));
        }
        for (i, ui) in u.iter().enumerate() {
            let s = a * ui;
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (x, vj) in row.iter_mut().zip(v) {
                *x += s * vj;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        max_abs_diff(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Kronecker product of two vectors, `a ⊗ b`, with `b` varying fastest.
pub fn kron(a: &[f64], b: &[f64]) -> Vector {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        out.extend(b.iter().map(|y| x * y));
    }
    Vector::new(out)
}

/// `x^{⊗p}` built as `x ⊗ x^{⊗(p−1)}`. Degree zero yields `[1]`.
pub fn self_tensor(x: &[f64], p: usize) -> Vector {
    let mut acc = Vector::new(vec![1.0]);
    for _ in 0..p {
        acc = kron(x, &acc);
    }
    acc
}

/// Coefficients of the odd matrix polynomial `X ← aX + b(XXᵀ)X + c(XXᵀ)²X`
/// applied by [`newton_schulz_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsPolynomial {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NsPolynomial {
    /// Classic cubic polar iteration; monotone on singular values in (0, √3).
    pub const CUBIC: NsPolynomial = NsPolynomial {
        a: 1.5,
        b: -0.5,
        c: 0.0,
    };

    /// Quintic coefficients used by the Muon reference implementation.
    pub const QUINTIC_MUON: NsPolynomial = NsPolynomial {
        a: 3.4445,
        b: -4.7750,
        c: 2.0315,
    };
}

impl Default for NsPolynomial {
    fn default() -> Self {
        Self::CUBIC
    }
}

pub const DEFAULT_NS_STEPS: usize = 5;

/// Cubic Newton-Schulz orthogonalisation with Frobenius prescaling.
pub fn newton_schulz(s: &Mat, steps: usize) -> Mat {
    newton_schulz_with(s, steps, NsPolynomial::CUBIC)
}

/// Newton-Schulz with an arbitrary odd polynomial. A zero input maps to zero.
pub fn newton_schulz_with(s: &Mat, steps: usize, poly: NsPolynomial) -> Mat {
    let norm = s.frobenius_norm();
    if norm == 0.0 {
        return Mat::zeros(s.rows(), s.cols());
    }
    let mut x = s.scaled(1.0 / norm);
    // Gram on the short side: X·(XᵀX) for tall/square, (XXᵀ)·X for wide.
    let tall = x.rows() >= x.cols();
    for _ in 0..steps {
        let xt = x.transpose();
        let gram = if tall {
            xt.matmul(&x)
        } else {
            x.matmul(&xt)
        }
        .expect("gram shapes agree");
        let n = gram.rows();
        let mut poly_mat = Mat::identity(n).scaled(poly.a);
        poly_mat.axpy(poly.b, &gram).expect("same shape");
        if poly.c != 0.0 {
            let g2 = gram.matmul(&gram).expect("square");
            poly_mat.axpy(poly.c, &g2).expect("same shape");
        }
        x = if tall {
            x.matmul(&poly_mat)
        } else {
            poly_mat.matmul(&x)
        }
        .expect("polynomial shapes agree");
    }
    x
}

/// Reduced singular value decomposition `a = U diag(σ) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub sigma: Vector,
    pub vt: Mat,
}

impl Svd {
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for c in 0..us.cols() {
                us.set(r, c, us.get(r, c) * self.sigma[c]);
            }
        }
        us.matmul(&self.vt).expect("svd factors conform")
    }

    /// Number of singular values above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|s| **s > rel_tol * smax).count()
    }

    /// Polar factor `U Vᵀ`.
    pub fn polar(&self) -> Mat {
        self.u.matmul(&self.vt).expect("svd factors conform")
    }

    /// Moore-Penrose pseudoinverse, dropping singular values below `rel_tol · σ_max`.
    pub fn pinv(&self, rel_tol: f64) -> Mat {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        let v = self.vt.transpose();
        let mut vs = v.clone();
        for c in 0..vs.cols() {
            let s = self.sigma[c];
            let inv = if smax > 0.0 && s > rel_tol * smax {
                1.0 / s
            } else {
                0.0
            };
            for r in 0..vs.rows() {
                vs.set(r, c, v.get(r, c) * inv);
            }
        }
        vs.matmul(&self.u.transpose()).expect("svd factors conform")
    }
}

pub const SVD_MAX_DIM: usize = 64;
const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD. Intended as a test oracle at desk scale.
pub fn svd_oracle(a: &Mat) -> Result<Svd> {
    let (m, n) = a.shape();
    if m.min(n) > SVD_MAX_DIM {
        return Err(MemError::Invalid(format!(
            "svd_oracle supports min(rows, cols) <= {SVD_MAX_DIM}, got {}",
            m.min(n)
        )));
    }
    if m < n {
        let t = svd_tall(&a.transpose());
        return Ok(Svd {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }
    Ok(svd_tall(a))
}

fn svd_tall(a: &Mat) -> Svd {
    let (m, n) = a.shape();
    // Column-major working copies make the column rotations contiguous.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).into_inner()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dot(c, c).sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let smax = order.first().map_or(0.0, |o| o.1);
    let mut u = Mat::zeros(m, n);
    let mut vt = Mat::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, (src, s)) in order.iter().enumerate() {
        sigma.push(*s);
        for k in 0..n {
            vt.set(dst, k, vcols[*src][k]);
        }
        if *s > 0.0 && *s > 1e-300_f64.max(smax * 1e-15) {
            for i in 0..m {
                u.set(i, dst, cols[*src][i] / s);
            }
        } else {
            missing.push(dst);
        }
    }
    complete_columns(&mut u, &missing);
    Svd {
        u,
        sigma: Vector::new(sigma),
        vt,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every other column.
fn complete_columns(u: &mut Mat, missing: &[usize]) {
    let m = u.rows();
    let mut basis = 0;
    for &col in missing {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _pass in 0..2 {
                for j in 0..u.cols() {
                    if j == col || (missing.contains(&j) && u.column(j).norm() == 0.0) {
                        continue;
                    }
                    let uj = u.column(j);
                    let proj = dot(&uj, &cand);
                    for i in 0..m {
                        cand[i] -= proj * uj[i];
                    }
                }
            }
            let n = dot(&cand, &cand).sqrt();
            if n > 1e-8 {
                for i in 0..m {
                    u.set(i, col, cand[i] / n);
                }
                break;
            }
        }
    }
}
