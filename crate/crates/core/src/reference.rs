//! Mean-field references: closed-form equilibrium measures and the interface shared with
//! numerically computed ones.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};

/// A probability measure `mu` together with its potential `h = g * mu` and the
/// scalars needed to split the Hamiltonian around it.
pub trait MeanFieldReference: Sync {
    fn dim(&self) -> usize;
    /// `h^mu(x) = int g(x - y) dmu(y)`.
    fn potential(&self, x: &[f64]) -> Result<f64>;
    fn density(&self, x: &[f64]) -> f64;
    /// `int int g(x - y) dmu(x) dmu(y)`.
    fn self_energy(&self) -> f64;
    /// `int V dmu`.
    fn potential_mean(&self) -> f64;
    /// `I_V(mu) = (1/2) int int g dmu dmu + int V dmu`.
    fn energy(&self) -> f64 {
        0.5 * self.self_energy() + self.potential_mean()
    }
    /// Constant value of `h + V` on the support.
    fn robin_constant(&self) -> f64;
    /// `int x dmu`.
    fn first_moment(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
    /// `int exp(-i k.x) dmu(x)`.
    fn fourier(&self, _k: &[f64]) -> Result<Complex<f64>> {
        Err(Error::Unsupported("no Fourier transform for this reference".into()))
    }
    /// Mass of the ball `B(center, r)`.
    fn ball_mass(&self, center: &[f64], r: f64) -> f64;
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Area of the intersection of two discs of radii `a`, `b` with centres at distance `d`.
pub(crate) fn disc_overlap(a: f64, b: f64, d: f64) -> f64 {
    use std::f64::consts::PI;
    if d >= a + b {
        return 0.0;
    }
    if d <= (a - b).abs() {
        let m = a.min(b);
        return PI * m * m;
    }
    let ca = ((d * d + a * a - b * b) / (2.0 * d * a)).clamp(-1.0, 1.0);
    let cb = ((d * d + b * b - a * a) / (2.0 * d * b)).clamp(-1.0, 1.0);
    let tri = 0.5 * ((-d + a + b) * (d + a - b) * (d - a + b) * (d + a + b)).max(0.0).sqrt();
    a * a * ca.acos() + b * b * cb.acos() - tri
}

/// Uniform disc of density `2 alpha / pi` and radius `1/sqrt(2 alpha)`: the equilibrium
/// measure of the 2-d log gas in `V = alpha |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleLaw {
    pub alpha: f64,
}

impl CircleLaw {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return crate::error::usage("circle law needs alpha > 0");
        }
        Ok(Self { alpha })
    }

    pub fn radius(&self) -> f64 {
        (0.5 / self.alpha).sqrt()
    }

    pub fn height(&self) -> f64 {
        2.0 * self.alpha / std::f64::consts::PI
    }
}

impl MeanFieldReference for CircleLaw {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        let r = radius(x);
        let big = self.radius();
        Ok(if r <= big { 0.5 * (1.0 - r * r / (big * big)) - big.ln() } else { -r.ln() })
    }

    fn density(&self, x: &[f64]) -> f64 {
        if radius(x) <= self.radius() { self.height() } else { 0.0 }
    }

    fn self_energy(&self) -> f64 {
        0.25 - self.radius().ln()
    }

    fn potential_mean(&self) -> f64 {
        0.25
    }

    fn robin_constant(&self) -> f64 {
        0.5 - self.radius().ln()
    }

    fn fourier(&self, k: &[f64]) -> Result<Complex<f64>> {
        let u = radius(k) * self.radius();
        let v = if u < 1e-8 { 1.0 - u * u / 8.0 } else { 2.0 * libm::j1(u) / u };
        Ok(Complex::new(v, 0.0))
    }

    fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        self.height() * disc_overlap(self.radius(), r, radius(center))
    }
}

/// Semicircle law on `[-a, a]`, `a = 1/sqrt(alpha)`: the equilibrium measure of the
/// 1-d log gas in `V = alpha x^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Semicircle {
    pub alpha: f64,
}

impl Semicircle {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return crate::error::usage("semicircle law needs alpha > 0");
        }
        Ok(Self { alpha })
    }

    pub fn edge(&self) -> f64 {
        self.alpha.sqrt().recip()
    }

    /// Distribution function on the real line.
    pub fn cdf(&self, x: f64) -> f64 {
        let a = self.edge();
        let t = (x / a).clamp(-1.0, 1.0);
        0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / std::f64::consts::PI
    }
}

impl MeanFieldReference for Semicircle {
    fn dim(&self) -> usize {
        1
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        let a = self.edge();
        let t = x[0].abs();
        let inside = -t * t / (a * a) + 0.5 - (0.5 * a).ln();
        if t <= a {
            return Ok(inside);
        }
        let s = (t * t - a * a).sqrt();
        Ok(inside + t * s / (a * a) - ((t + s) / a).ln())
    }

    fn density(&self, x: &[f64]) -> f64 {
        let a = self.edge();
        let t = x[0].abs();
        if t < a { 2.0 / (std::f64::consts::PI * a * a) * (a * a - t * t).sqrt() } else { 0.0 }
    }

    fn self_energy(&self) -> f64 {
        0.25 + 2f64.ln() - self.edge().ln()
    }

    fn potential_mean(&self) -> f64 {
        0.25
    }

    fn robin_constant(&self) -> f64 {
        0.5 + 2f64.ln() - self.edge().ln()
    }

    fn fourier(&self, k: &[f64]) -> Result<Complex<f64>> {
        let u = k[0].abs() * self.edge();
        let v = if u < 1e-8 { 1.0 - u * u / 8.0 } else { 2.0 * libm::j1(u) / u };
        Ok(Complex::new(v, 0.0))
    }

    fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        self.cdf(center[0] + r) - self.cdf(center[0] - r)
    }
}

/// A reference rigidly translated by `shift`.
pub struct Shifted<'a> {
    pub inner: &'a dyn MeanFieldReference,
    pub shift: Vec<f64>,
}

impl Shifted<'_> {
    fn back(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).map(|(a, b)| a - b).collect()
    }
}

impl MeanFieldReference for Shifted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        self.inner.potential(&self.back(x))
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.inner.density(&self.back(x))
    }

    fn self_energy(&self) -> f64 {
        self.inner.self_energy()
    }

    /// Note: `V` is not translated, so this is the inner value.
    fn potential_mean(&self) -> f64 {
        self.inner.potential_mean()
    }

    fn robin_constant(&self) -> f64 {
        self.inner.robin_constant()
    }

    fn first_moment(&self) -> Vec<f64> {
        self.inner.first_moment().iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }

    fn fourier(&self, k: &[f64]) -> Result<Complex<f64>> {
        let phase: f64 = k.iter().zip(&self.shift).map(|(a, b)| a * b).sum();
        Ok(self.inner.fourier(k)? * Complex::from_polar(1.0, -phase))
    }

    fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        self.inner.ball_mass(&self.back(center), r)
    }
}
