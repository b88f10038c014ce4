//! Pair interaction kernels: logarithmic, Coulomb and Riesz.

use std::f64::consts::PI;

use crate::error::{usage, Error, Result};
use crate::scalar::{norm2, Scalar};
use crate::special::unit_sphere_area;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `-log|x|` on the line.
    Log1,
    /// `-log|x|` in the plane.
    Log2,
    /// `|x|^{2-d}`, d >= 3.
    Coulomb,
    /// `|x|^{-s}`.
    Riesz,
}

/// A radial pair potential `g` together with its dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionKernel {
    family: KernelFamily,
    dim: usize,
    exponent: f64,
}

impl InteractionKernel {
    pub fn log1() -> Self {
        Self { family: KernelFamily::Log1, dim: 1, exponent: 0.0 }
    }

    pub fn log2() -> Self {
        Self { family: KernelFamily::Log2, dim: 2, exponent: 0.0 }
    }

    pub fn coulomb(dim: usize) -> Result<Self> {
        if dim < 3 {
            return usage(format!("Coulomb kernel needs d >= 3, got {dim} (use Log2 for d = 2)"));
        }
        Ok(Self { family: KernelFamily::Coulomb, dim, exponent: dim as f64 - 2.0 })
    }

    /// Riesz kernel with `0 < s < d`, the integrable range used by energies.
    pub fn riesz(s: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !(s > 0.0 && s < dim as f64) {
            return usage(format!("Riesz kernel needs 0 < s < d, got s = {s}, d = {dim}"));
        }
        Ok(Self { family: KernelFamily::Riesz, dim, exponent: s })
    }

    /// Riesz kernel with any `s > 0`; only lattice sums accept `s >= d`.
    pub fn riesz_any(s: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !(s > 0.0) {
            return usage(format!("Riesz kernel needs s > 0, got {s}"));
        }
        Ok(Self { family: KernelFamily::Riesz, dim, exponent: s })
    }

    /// Parse `log1`, `log2`, `coulomb` or `riesz:<s>` for dimension `dim`.
    pub fn parse(name: &str, dim: usize) -> Result<Self> {
        let name = name.trim().to_ascii_lowercase();
        let k = match name.as_str() {
            "log1" => Self::log1(),
            "log2" => Self::log2(),
            "coulomb" => Self::coulomb(dim)?,
            other => match other.strip_prefix("riesz:") {
                Some(s) => {
                    let s: f64 = s.parse().map_err(|_| Error::Usage(format!("bad Riesz exponent in '{other}'")))?;
                    Self::riesz(s, dim)?
                }
                None => return usage(format!("unknown kernel '{other}'")),
            },
        };
        if k.dim != dim {
            return usage(format!("kernel {name} lives in d = {}, requested d = {dim}", k.dim));
        }
        Ok(k)
    }

    pub fn name(&self) -> String {
        match self.family {
            KernelFamily::Log1 => "log1".into(),
            KernelFamily::Log2 => "log2".into(),
            KernelFamily::Coulomb => "coulomb".into(),
            KernelFamily::Riesz => format!("riesz:{}", self.exponent),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_log(&self) -> bool {
        matches!(self.family, KernelFamily::Log1 | KernelFamily::Log2)
    }

    /// Power `s` of `|x|^{-s}`; `None` for the log families.
    pub fn exponent(&self) -> Option<f64> {
        if self.is_log() {
            None
        } else {
            Some(self.exponent)
        }
    }

    /// `g` as a function of the distance.
    #[inline]
    pub fn value_at<T: Scalar>(&self, r: T) -> T {
        if self.is_log() {
            -r.ln()
        } else {
            r.powf(T::of(-self.exponent))
        }
    }

    /// `g` as a function of the squared distance; errors on zero.
    #[inline]
    pub fn value_r2<T: Scalar>(&self, r2: T) -> Result<T> {
        if !(r2 > T::zero()) {
            return Err(Error::Domain("coincident points in kernel evaluation".into()));
        }
        Ok(if self.is_log() {
            -T::of(0.5) * r2.ln()
        } else {
            r2.powf(T::of(-0.5 * self.exponent))
        })
    }

    /// Factor `f` with `grad g(x) = f * x`, from the squared distance.
    #[inline]
    pub fn gradient_factor_r2<T: Scalar>(&self, r2: T) -> Result<T> {
        if !(r2 > T::zero()) {
            return Err(Error::Domain("coincident points in kernel gradient".into()));
        }
        Ok(if self.is_log() {
            -r2.recip()
        } else {
            let s = T::of(self.exponent);
            -s * r2.powf(-(s + T::of(2.0)) * T::of(0.5))
        })
    }

    fn check_dim<T>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return usage(format!("displacement has {} components, kernel dimension is {}", x.len(), self.dim));
        }
        Ok(())
    }

    pub fn value<T: Scalar>(&self, displacement: &[T]) -> Result<T> {
        self.check_dim(displacement)?;
        self.value_r2(norm2(displacement))
    }

    pub fn gradient<T: Scalar>(&self, displacement: &[T]) -> Result<Vec<T>> {
        self.check_dim(displacement)?;
        let f = self.gradient_factor_r2(norm2(displacement))?;
        Ok(displacement.iter().map(|&x| f * x).collect())
    }

    /// The constant `c_d` in `-Δg = c_d δ_0`; only defined for Log2 and Coulomb.
    pub fn laplace_constant(&self) -> Result<f64> {
        match self.family {
            KernelFamily::Log2 => Ok(2.0 * PI),
            KernelFamily::Coulomb => Ok((self.dim as f64 - 2.0) * unit_sphere_area(self.dim)),
            _ => Err(Error::Unsupported(format!(
                "kernel {} is not a fundamental solution of the Laplacian",
                self.name()
            ))),
        }
    }

    /// Whether the kernel is integrable at the origin in its dimension.
    pub fn is_locally_integrable(&self) -> bool {
        self.is_log() || self.exponent < self.dim as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn values_from_examples() {
        assert_eq!(InteractionKernel::log2().value(&[1.0, 0.0]).unwrap(), 0.0);
        let c3 = InteractionKernel::coulomb(3).unwrap();
        assert_relative_eq!(c3.value(&[0.0, 0.0, 2.0]).unwrap(), 0.5, max_relative = 1e-15);
        let r = InteractionKernel::riesz(1.0, 2).unwrap();
        assert_relative_eq!(r.value(&[3.0, 4.0]).unwrap(), 0.2, max_relative = 1e-15);
    }

    #[test]
    fn gradients_from_examples() {
        let g = InteractionKernel::log2().gradient(&[1.0, 0.0]).unwrap();
        assert_eq!(g, vec![-1.0, 0.0]);
        let g = InteractionKernel::coulomb(3).unwrap().gradient(&[0.0, 0.0, 2.0]).unwrap();
        assert_relative_eq!(g[2], -0.25, max_relative = 1e-15);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn zero_displacement_is_domain_error() {
        for k in [InteractionKernel::log2(), InteractionKernel::riesz(0.5, 2).unwrap()] {
            assert!(matches!(k.value(&[0.0, 0.0]), Err(Error::Domain(_))));
            assert!(matches!(k.gradient(&[0.0, 0.0]), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn laplace_constants() {
        assert_relative_eq!(InteractionKernel::log2().laplace_constant().unwrap(), 2.0 * PI);
        assert_relative_eq!(InteractionKernel::coulomb(3).unwrap().laplace_constant().unwrap(), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(
            InteractionKernel::coulomb(5).unwrap().laplace_constant().unwrap(),
            8.0 * PI * PI,
            max_relative = 1e-14
        );
        assert!(matches!(InteractionKernel::log1().laplace_constant(), Err(Error::Unsupported(_))));
        assert!(InteractionKernel::riesz(1.0, 2).unwrap().laplace_constant().is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(InteractionKernel::coulomb(2).is_err());
        assert!(InteractionKernel::riesz(2.0, 2).is_err());
        assert!(InteractionKernel::riesz_any(3.0, 2).is_ok());
        assert_eq!(InteractionKernel::parse("riesz:0.5", 2).unwrap().exponent(), Some(0.5));
        assert!(InteractionKernel::parse("log1", 2).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let v: f32 = InteractionKernel::riesz(1.0, 2).unwrap().value(&[3.0f32, 4.0]).unwrap();
        assert!((v - 0.2).abs() < 1e-6);
    }
}
