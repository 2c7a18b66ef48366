//! Key and query liftings.
//!
//! A polynomial lift stacks every tensor degree up to `p`:
//! `φ(x) = [a₀, a₁·x, a₂·x^{⊗2}, …, a_p·x^{⊗p}]`, so that
//! `φ(x)ᵀφ(y) = Σ aᵢ²·(xᵀy)ⁱ`. The truncated exponential lift fixes
//! `aᵢ = 1/√(i!)`, which makes the kernel the degree-`P` Taylor polynomial of
//! `exp(xᵀy)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MemError, Result};
use crate::linalg::{dot, kron, Vector};

/// Largest lifted dimension [`FeatureMapSpec::apply`] will materialise.
pub const MAX_LIFTED_DIM: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    Polynomial,
    ExpTruncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub kind: MapKind,
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub normalize_input: bool,
}

/// `(1, 1, 1/2, 1/6, …, 1/p!)`.
pub fn init_taylor_coeffs(p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p + 1);
    let mut fact = 1.0;
    for i in 0..=p {
        if i > 0 {
            fact *= i as f64;
        }
        out.push(1.0 / fact);
    }
    out
}

impl FeatureMapSpec {
    pub fn identity() -> Self {
        Self {
            kind: MapKind::Identity,
            degree: 1,
            coeffs: vec![0.0, 1.0],
            normalize_input: false,
        }
    }

    /// Stacked polynomial lift with Taylor-initialised coefficients.
    pub fn polynomial(p: usize) -> Self {
        Self::polynomial_with(init_taylor_coeffs(p)).expect("non-empty coefficients")
    }

    pub fn polynomial_with(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(MemError::Invalid(
                "polynomial map needs at least one coefficient".into(),
            ));
        }
        Ok(Self {
            kind: MapKind::Polynomial,
            degree: coeffs.len() - 1,
            coeffs,
            normalize_input: false,
        })
    }

    /// Single block `x^{⊗p}` expressed in the stacked layout (lower degrees zeroed).
    pub fn block(p: usize) -> Self {
        let mut coeffs = vec![0.0; p + 1];
        coeffs[p] = 1.0;
        Self::polynomial_with(coeffs).expect("non-empty coefficients")
    }

    /// Truncated exponential lift of degree `p`, unit-normalising inputs.
    pub fn exp_truncated(p: usize) -> Self {
        let coeffs = init_taylor_coeffs(p).into_iter().map(f64::sqrt).collect();
        Self {
            kind: MapKind::ExpTruncated,
            degree: p,
            coeffs,
            normalize_input: true,
        }
    }

    pub fn with_normalize(mut self, on: bool) -> Self {
        self.normalize_input = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.len() != self.degree + 1 {
            return Err(MemError::Invalid(format!(
                "coefficient count {} does not match degree {}",
                self.coeffs.len(),
                self.degree
            )));
        }
        if self.kind == MapKind::Identity
            && (self.degree != 1 || self.coeffs[0] != 0.0 || self.coeffs[1] != 1.0)
        {
            return Err(MemError::Invalid(
                "identity map must have degree 1 and coefficients (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Dimension of the lift for `d`-dimensional inputs, or `None` on overflow.
    pub fn output_dim(&self, d: usize) -> Option<usize> {
        if self.kind == MapKind::Identity {
            return Some(d);
        }
        let mut total: usize = 0;
        let mut block: usize = 1;
        for i in 0..=self.degree {
            if i > 0 {
                block = block.checked_mul(d)?;
            }
            total = total.checked_add(block)?;
        }
        Some(total)
    }

    fn prepare(&self, x: &[f64]) -> Vector {
        let v = Vector::from(x);
        if self.normalize_input {
            v.normalized()
        } else {
            v
        }
    }

    /// Materialises the lift.
    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        self.validate()?;
        let x = self.prepare(x);
        if self.kind == MapKind::Identity {
            return Ok(x);
        }
        let dim = self.output_dim(x.dim()).unwrap_or(usize::MAX);
        if dim > MAX_LIFTED_DIM {
            return Err(MemError::Capacity {
                dim,
                limit: MAX_LIFTED_DIM,
            });
        }
        let mut out = Vec::with_capacity(dim);
        let mut block = Vector::new(vec![1.0]);
        for (i, a) in self.coeffs.iter().enumerate() {
            if i > 0 {
                block = kron(&x, &block);
            }
            out.extend(block.iter().map(|b| a * b));
        }
        Ok(Vector::new(out))
    }

    /// `φ(x)ᵀφ(y)` evaluated through powers of `xᵀy`.
    pub fn kernel_dot(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(shape_err("kernel_dot", x.len(), y.len()));
        }
        let xs = self.prepare(x);
        let ys = self.prepare(y);
        let s = dot(&xs, &ys);
        if self.kind == MapKind::Identity {
            return Ok(s);
        }
        let mut pow = 1.0;
        let mut acc = 0.0;
        for (i, a) in self.coeffs.iter().enumerate() {
            if i > 0 {
                pow *= s;
            }
            acc += a * a * pow;
        }
        Ok(acc)
    }
}

/// Free-function form of [`FeatureMapSpec::apply`].
pub fn apply_poly(spec: &FeatureMapSpec, x: &[f64]) -> Result<Vector> {
    spec.apply(x)
}

/// Free-function form of [`FeatureMapSpec::kernel_dot`].
pub fn kernel_dot(x: &[f64], y: &[f64], spec: &FeatureMapSpec) -> Result<f64> {
    spec.kernel_dot(x, y)
}

/// `C(n, k)` as `f64`; exact for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Count of distinct monomials of total degree `<= p` in `d` variables.
pub fn monomials_up_to(d: usize, p: usize) -> usize {
    binomial(d + p, p)
}

/// Count of distinct monomials of total degree exactly `p` in `d` variables.
pub fn monomials_exact(d: usize, p: usize) -> usize {
    if d == 0 {
        return usize::from(p == 0);
    }
    binomial(d + p - 1, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_vec, seeded, unit_vec};

    #[test]
    fn taylor_coeffs() {
        assert_eq!(init_taylor_coeffs(0), vec![1.0]);
        let c = init_taylor_coeffs(3);
        assert_eq!(&c[..3], &[1.0, 1.0, 0.5]);
        assert!((c[3] - 1.0 / 6.0).abs() < 1e-16);
        assert_eq!(init_taylor_coeffs(5)[5], 1.0 / 120.0);
    }

    #[test]
    fn identity_passthrough() {
        let id = FeatureMapSpec::identity();
        assert_eq!(&*id.apply(&[3.0, -1.0]).unwrap(), &[3.0, -1.0]);
        assert_eq!(id.kernel_dot(&[3.0, -1.0], &[2.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_basis_vector() {
        let spec = FeatureMapSpec::polynomial_with(vec![1.0, 1.0, 0.5]).unwrap();
        let out = spec.apply(&[1.0, 0.0]).unwrap();
        assert_eq!(&*out, &[1.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(spec.output_dim(2), Some(7));
    }

    #[test]
    fn exp_truncated_taylor_bound() {
        let spec = FeatureMapSpec::exp_truncated(6);
        let mut rng = seeded(2);
        let bound = std::f64::consts::E / 5040.0;
        for _ in 0..20 {
            let q = unit_vec(&mut rng, 3);
            let k = unit_vec(&mut rng, 3);
            let lifted = spec.apply(&q).unwrap().dot(&spec.apply(&k).unwrap());
            assert!((lifted - q.dot(&k).exp()).abs() <= bound);
        }
    }

    #[test]
    fn kernel_dot_matches_materialised_lift() {
        let mut rng = seeded(9);
        let spec = FeatureMapSpec::polynomial(3);
        for _ in 0..10 {
            let x = gaussian_vec(&mut rng, 4, 1.0);
            let y = gaussian_vec(&mut rng, 4, 1.0);
            let direct = spec.apply(&x).unwrap().dot(&spec.apply(&y).unwrap());
            let kern = spec.kernel_dot(&x, &y).unwrap();
            assert!((direct - kern).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn kernel_dot_high_degree_is_exp() {
        let mut rng = seeded(10);
        let spec = FeatureMapSpec::exp_truncated(16);
        for _ in 0..10 {
            let q = unit_vec(&mut rng, 5);
            let k = unit_vec(&mut rng, 5);
            assert!((spec.kernel_dot(&q, &k).unwrap() - q.dot(&k).exp()).abs() <= 1e-9);
        }
    }

    #[test]
    fn gating_limit_is_identity_padded() {
        let spec = FeatureMapSpec::polynomial_with(vec![0.0, 1.0, 0.0]).unwrap();
        let x = [0.3, -1.2];
        let y = [2.0, 0.5];
        let out = spec.apply(&x).unwrap();
        assert_eq!(&out[1..3], &x);
        assert!(out[0] == 0.0 && out[3..].iter().all(|v| *v == 0.0));
        assert_eq!(spec.kernel_dot(&x, &y).unwrap(), dot(&x, &y));
    }

    #[test]
    fn capacity_guard() {
        let spec = FeatureMapSpec::polynomial(7);
        assert!(matches!(
            spec.apply(&[0.1; 8]),
            Err(MemError::Capacity { .. })
        ));
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials_up_to(3, 2), 10);
        assert_eq!(monomials_exact(4, 2), 10);
        assert_eq!(monomials_exact(4, 1), 4);
    }

    proptest::proptest! {
        #[test]
        fn kernel_symmetry(x in proptest::collection::vec(-1.0f64..1.0, 4),
                           y in proptest::collection::vec(-1.0f64..1.0, 4),
                           p in 0usize..5) {
            let spec = FeatureMapSpec::polynomial(p);
            let a = spec.kernel_dot(&x, &y).unwrap();
            let b = spec.kernel_dot(&y, &x).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
