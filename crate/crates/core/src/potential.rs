//! Confining potentials `V`.

use crate::error::{usage, Error, Result};
use crate::scalar::{norm2, Scalar};

/// Potential sampled on the nodes of a rectangular grid, interpolated multilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    lower: Vec<f64>,
    spacing: Vec<f64>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TabulatedPotential {
    /// Node values in row-major order (last axis fastest); node `k` on axis `a` sits at
    /// `lower[a] + k * spacing[a]`.
    pub fn new(lower: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || spacing.len() != d || shape.len() != d {
            return usage("tabulated potential: lower/spacing/shape must share a nonzero dimension");
        }
        if shape.iter().any(|&n| n < 2) || spacing.iter().any(|&h| !(h > 0.0)) {
            return usage("tabulated potential: need >= 2 nodes and positive spacing per axis");
        }
        if values.len() != shape.iter().product::<usize>() || values.iter().any(|v| !v.is_finite()) {
            return usage("tabulated potential: value count mismatch or non-finite value");
        }
        Ok(Self { lower, spacing, shape, values })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Cell index and local coordinate per axis; points outside are extrapolated
    /// linearly from the boundary cell.
    fn locate(&self, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let mut idx = Vec::with_capacity(x.len());
        let mut t = Vec::with_capacity(x.len());
        for a in 0..x.len() {
            let u = (x[a] - self.lower[a]) / self.spacing[a];
            let i = (u.floor().max(0.0) as usize).min(self.shape[a] - 2);
            idx.push(i);
            t.push(u - i as f64);
        }
        (idx, t)
    }

    fn node(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (a, &i) in idx.iter().enumerate() {
            flat = flat * self.shape[a] + i;
        }
        self.values[flat]
    }

    /// Value and gradient of the multilinear interpolant.
    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let (idx, t) = self.locate(x);
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut corner = vec![0usize; d];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let bit = (mask >> a) & 1;
                corner[a] = idx[a] + bit;
                w *= if bit == 1 { t[a] } else { 1.0 - t[a] };
            }
            let v = self.node(&corner);
            value += w * v;
            for (a, g) in grad.iter_mut().enumerate() {
                let mut wa = 1.0;
                for b in 0..d {
                    let bit = (mask >> b) & 1;
                    wa *= if b == a {
                        if bit == 1 { 1.0 } else { -1.0 }
                    } else if bit == 1 {
                        t[b]
                    } else {
                        1.0 - t[b]
                    };
                }
                *g += wa * v / self.spacing[a];
            }
        }
        (value, grad)
    }
}

/// External field `V`.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalPotential {
    /// `alpha |x|^2`; `alpha = 0` is the free case.
    Quadratic { alpha: f64 },
    /// `sum_k coeffs[k] |x|^k`.
    RadialPolynomial { coeffs: Vec<f64> },
    Tabulated(TabulatedPotential),
}

impl ExternalPotential {
    pub fn zero() -> Self {
        Self::Quadratic { alpha: 0.0 }
    }

    pub fn quadratic(alpha: f64) -> Self {
        Self::Quadratic { alpha }
    }

    pub fn radial_polynomial(coeffs: Vec<f64>) -> Self {
        Self::RadialPolynomial { coeffs }
    }

    /// Parse `zero`, `quadratic:<alpha>` or `radial:<c0>,<c1>,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "zero" {
            return Ok(Self::zero());
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad number '{s}' in potential '{text}'")))
        };
        if let Some(a) = text.strip_prefix("quadratic:") {
            return Ok(Self::quadratic(num(a)?));
        }
        if let Some(c) = text.strip_prefix("radial:") {
            let coeffs = c.split(',').map(num).collect::<Result<Vec<_>>>()?;
            return Ok(Self::radial_polynomial(coeffs));
        }
        usage(format!("unknown potential '{text}' (zero | quadratic:<a> | radial:<c0,c1,..>)"))
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Quadratic { alpha } if *alpha == 0.0 => "zero".into(),
            Self::Quadratic { alpha } => format!("quadratic:{alpha}"),
            Self::RadialPolynomial { coeffs } => {
                let parts: Vec<String> = coeffs.iter().map(|c| c.to_string()).collect();
                format!("radial:{}", parts.join(","))
            }
            Self::Tabulated(t) => format!("tabulated(d={})", t.dim()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Quadratic { alpha } if *alpha == 0.0)
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self, Self::Tabulated(_))
    }

    pub fn value<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Self::Quadratic { alpha } => T::of(*alpha) * norm2(x),
            Self::RadialPolynomial { coeffs } => {
                let r = norm2(x).sqrt();
                coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * r + T::of(c))
            }
            Self::Tabulated(t) => {
                let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
                T::of(t.value_and_gradient(&xf).0)
            }
        }
    }

    /// Writes `grad V(x)` into `out`.
    pub fn gradient_into<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        match self {
            Self::Quadratic { alpha } => {
                let a2 = T::of(2.0 * alpha);
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = a2 * xi;
                }
            }
            Self::RadialPolynomial { coeffs } => {
                // grad = V'(r) x / r
                let r = norm2(x).sqrt();
                let mut factor = T::zero();
                for (k, &c) in coeffs.iter().enumerate().skip(1) {
                    if c == 0.0 {
                        continue;
                    }
                    // c k r^{k-2}
                    if k == 1 {
                        if r > T::zero() {
                            factor = factor + T::of(c) / r;
                        }
                    } else {
                        factor = factor + T::of(c * k as f64) * r.powi(k as i32 - 2);
                    }
                }
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = factor * xi;
                }
            }
            Self::Tabulated(t) => {
                let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
                let (_, g) = t.value_and_gradient(&xf);
                for (o, gi) in out.iter_mut().zip(g) {
                    *o = T::of(gi);
                }
            }
        }
    }

    pub fn gradient<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.gradient_into(x, &mut out);
        out
    }

    /// `ΔV(x)`; tabulated potentials refuse.
    pub fn laplacian<T: Scalar>(&self, x: &[T]) -> Result<T> {
        let d = x.len() as f64;
        match self {
            Self::Quadratic { alpha } => Ok(T::of(2.0 * d * alpha)),
            Self::RadialPolynomial { coeffs } => {
                // Δ r^k = k (k + d - 2) r^{k-2}
                let r = norm2(x).sqrt();
                let mut sum = T::zero();
                for (k, &c) in coeffs.iter().enumerate().skip(1) {
                    let kk = k as f64;
                    let factor = c * kk * (kk + d - 2.0);
                    if factor == 0.0 {
                        continue;
                    }
                    if k < 2 && !(r > T::zero()) {
                        return Err(Error::Domain("Laplacian of |x|^k with k < 2 at the origin".into()));
                    }
                    sum = sum + T::of(factor) * r.powi(k as i32 - 2);
                }
                Ok(sum)
            }
            Self::Tabulated(_) => Err(Error::Unsupported(
                "Laplacian of an interpolated potential is not provided".into(),
            )),
        }
    }

    /// Radial derivative `V'(r)` for radial forms.
    pub fn radial_derivative(&self, r: f64) -> Result<f64> {
        match self {
            Self::Quadratic { alpha } => Ok(2.0 * alpha * r),
            Self::RadialPolynomial { coeffs } => Ok(coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64 * r.powi(k as i32 - 1))
                .sum()),
            Self::Tabulated(_) => Err(Error::Unsupported("tabulated potential is not radial".into())),
        }
    }
}
