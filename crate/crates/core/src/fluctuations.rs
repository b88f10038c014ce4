//! Microscopic statistics of sampled or minimized configurations.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::config::Configuration;
use crate::error::{usage, Error, Result};
use crate::gibbs::SampleSet;
use crate::grid::GriddedDensity;
use crate::kernel::KernelFamily;
use crate::potential::ExternalPotential;
use crate::reference::MeanFieldReference;
use crate::special::{gauss_legendre_on, unit_sphere_area};
use crate::stats::{batch_means, histogram, ks_normal_fitted, least_squares, mean, BatchEstimate};

/// Test functions with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `amplitude (1 - |x - center|^2 / radius^2)^power` inside the ball, zero outside.
    Bump { center: Vec<f64>, radius: f64, power: u32, amplitude: f64 },
    /// A constant over all of space.
    Constant(f64),
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, radius: f64, power: u32) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return usage(format!("bump radius must be positive, got {radius}"));
        }
        if power < 3 {
            return usage(format!("bump power must be at least 3 for C^2 smoothness, got {power}"));
        }
        Ok(Self::Bump { center, radius, power, amplitude: 1.0 })
    }

    /// The bump `(1 - 4|x|^2)^4` on the ball of radius 1/2 about the origin.
    pub fn standard_bump(dim: usize) -> Self {
        Self::Bump { center: vec![0.0; dim], radius: 0.5, power: 4, amplitude: 1.0 }
    }

    pub fn scaled(self, factor: f64) -> Self {
        match self {
            Self::Bump { center, radius, power, amplitude } => Self::Bump { center, radius, power, amplitude: amplitude * factor },
            Self::Constant(c) => Self::Constant(c * factor),
        }
    }

    pub fn shifted(self, shift: &[f64]) -> Self {
        match self {
            Self::Bump { center, radius, power, amplitude } => {
                let center = center.iter().zip(shift).map(|(c, s)| c + s).collect();
                Self::Bump { center, radius, power, amplitude }
            }
            c => c,
        }
    }

    /// Radius of the support ball, infinite for constants.
    pub fn support_radius(&self) -> f64 {
        match self {
            Self::Bump { radius, .. } => *radius,
            Self::Constant(_) => f64::INFINITY,
        }
    }

    // (s, offset) with s = |x - c|^2 / r^2
    fn reduced(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Self::Bump { center, radius, .. } => {
                let y: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                (y.iter().map(|v| v * v).sum::<f64>() / (radius * radius), y)
            }
            Self::Constant(_) => (0.0, vec![0.0; x.len()]),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Bump { power, amplitude, .. } => {
                let (s, _) = self.reduced(x);
                if s >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - s).powi(*power as i32)
                }
            }
            Self::Constant(c) => *c,
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Bump { radius, power, amplitude, .. } => {
                let (s, y) = self.reduced(x);
                if s >= 1.0 {
                    return vec![0.0; x.len()];
                }
                let k = *power as f64;
                let c = -amplitude * k * (1.0 - s).powi(*power as i32 - 1) * 2.0 / (radius * radius);
                y.iter().map(|v| c * v).collect()
            }
            Self::Constant(_) => vec![0.0; x.len()],
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match self {
            Self::Bump { radius, power, amplitude, .. } => {
                let (s, _) = self.reduced(x);
                if s >= 1.0 {
                    return 0.0;
                }
                let k = *power as f64;
                let r2 = radius * radius;
                let d1 = -amplitude * k * (1.0 - s).powi(*power as i32 - 1);
                let d2 = amplitude * k * (k - 1.0) * (1.0 - s).powi(*power as i32 - 2);
                d2 * 4.0 * s / r2 + d1 * 2.0 * x.len() as f64 / r2
            }
            Self::Constant(_) => 0.0,
        }
    }

    /// Dirichlet energy `int |grad f|^2` in dimension `dim`.
    pub fn gradient_energy(&self, dim: usize) -> f64 {
        match self {
            Self::Bump { radius, power, amplitude, .. } => {
                let k = *power as f64;
                // radial integrand is a polynomial, so a rule of this size is exact
                let nodes = 2 * *power as usize + dim + 2;
                let radial: f64 = gauss_legendre_on(nodes, 0.0, *radius)
                    .into_iter()
                    .map(|(rho, w)| {
                        let s = rho * rho / (radius * radius);
                        let g = amplitude * k * (1.0 - s).powi(*power as i32 - 1) * 2.0 * rho / (radius * radius);
                        w * g * g * rho.powi(dim as i32 - 1)
                    })
                    .sum();
                unit_sphere_area(dim) * radial
            }
            Self::Constant(_) => 0.0,
        }
    }

    /// `int f d mu` by quadrature over the support of `f`.
    pub fn integrate(&self, reference: &dyn MeanFieldReference) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Bump { center, radius, .. } => {
                let f = |x: &[f64]| self.value(x) * reference.density(x);
                ball_quadrature(center, *radius, f)
            }
        }
    }
}

/// Integral over a ball in polar coordinates: panelled Gauss-Legendre in the radius and a
/// periodic trapezoid (with a Gauss-Legendre polar angle in 3-d).
fn ball_quadrature(center: &[f64], radius: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let d = center.len();
    let panels = 8;
    let radial: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| gauss_legendre_on(12, radius * p as f64 / panels as f64, radius * (p + 1) as f64 / panels as f64))
        .collect();
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    match d {
        1 => {
            for &(r, w) in &radial {
                for sgn in [-1.0, 1.0] {
                    x[0] = center[0] + sgn * r;
                    total += w * f(&x);
                }
            }
        }
        2 => {
            let m = 256;
            for &(r, w) in &radial {
                for a in 0..m {
                    let t = 2.0 * PI * a as f64 / m as f64;
                    x[0] = center[0] + r * t.cos();
                    x[1] = center[1] + r * t.sin();
                    total += w * r * (2.0 * PI / m as f64) * f(&x);
                }
            }
        }
        _ => {
            let m = 64;
            let polar = gauss_legendre_on(32, -1.0, 1.0);
            for &(r, w) in &radial {
                for &(ct, wt) in &polar {
                    let st = (1.0 - ct * ct).sqrt();
                    for a in 0..m {
                        let t = 2.0 * PI * a as f64 / m as f64;
                        x[0] = center[0] + r * st * t.cos();
                        x[1] = center[1] + r * st * t.sin();
                        x[2] = center[2] + r * ct;
                        total += w * r * r * wt * (2.0 * PI / m as f64) * f(&x);
                    }
                }
            }
        }
    }
    total
}

/// A configuration rescaled around a point to unit local density.
#[derive(Debug, Clone, PartialEq)]
pub struct PointProcessSample {
    /// Blown-up points inside the window.
    pub points: Vec<Vec<f64>>,
    pub window: f64,
    pub center: Vec<f64>,
    /// `mu_V(center)`.
    pub local_density: f64,
    /// `(N mu_V(center))^(1/d)`.
    pub scale: f64,
}

impl PointProcessSample {
    /// Maps the retained points back to the original coordinates.
    pub fn original_points(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().zip(&self.center).map(|(y, c)| y / self.scale + c).collect()).collect()
    }
}

fn blow_up_scale(n: usize, reference: &dyn MeanFieldReference, center: &[f64]) -> Result<(f64, f64)> {
    if center.len() != reference.dim() {
        return usage(format!("blow-up centre has dimension {}, expected {}", center.len(), reference.dim()));
    }
    let rho = reference.density(center);
    if !(rho > 0.0) {
        return usage(format!("blow-up centre {center:?} is outside the support of the equilibrium measure"));
    }
    Ok((rho, (n as f64 * rho).powf(1.0 / center.len() as f64)))
}

pub fn blow_up(config: &Configuration<f64>, center: &[f64], reference: &dyn MeanFieldReference, window: f64) -> Result<PointProcessSample> {
    let (rho, scale) = blow_up_scale(config.len(), reference, center)?;
    let points = config
        .points()
        .map(|p| p.iter().zip(center).map(|(x, c)| scale * (x - c)).collect::<Vec<f64>>())
        .filter(|y| y.iter().map(|v| v * v).sum::<f64>().sqrt() <= window)
        .collect();
    Ok(PointProcessSample { points, window, center: center.to_vec(), local_density: rho, scale })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Points of `config` in the closed ball `B(center, r)`.
pub fn count_in_ball(config: &Configuration<f64>, center: &[f64], r: f64) -> usize {
    config.points().filter(|p| distance(p, center) <= r).count()
}

/// `#{x_i in B(center, r)} - N mu_V(B(center, r))`.
pub fn discrepancy(config: &Configuration<f64>, reference: &dyn MeanFieldReference, center: &[f64], r: f64) -> f64 {
    count_in_ball(config, center, r) as f64 - config.len() as f64 * reference.ball_mass(center, r)
}

/// `sum f(x_i) - N int f d mu_V`.
pub fn linear_statistic_fluctuation(config: &Configuration<f64>, f: &TestFunction, reference: &dyn MeanFieldReference) -> f64 {
    let sum: f64 = config.points().map(|p| f.value(p)).sum();
    sum - config.len() as f64 * f.integrate(reference)
}

/// Atoms at the mass quantiles `(k + 1/2)/N` of a 1-d reference given by its CDF.
pub fn quantile_atoms(n: usize, lo: f64, hi: f64, cdf: impl Fn(f64) -> f64) -> Configuration<f64> {
    let pts = (0..n)
        .map(|k| {
            let target = (k as f64 + 0.5) / n as f64;
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if cdf(m) < target {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        })
        .collect();
    Configuration::new(1, pts).expect("one coordinate per atom")
}

/// Poisson point process with intensity `mean_count * density`, sampled cell by cell.
pub fn poisson_sample<R: Rng>(density: &GriddedDensity, mean_count: f64, rng: &mut R) -> Result<Configuration<f64>> {
    if !(mean_count >= 0.0) {
        return usage("Poisson intensity must be non-negative");
    }
    let grid = density.grid();
    let d = grid.dim();
    let h = grid.spacing().to_vec();
    let mut pts = Vec::new();
    for (cell, m) in density.masses().into_iter().enumerate() {
        let lam = mean_count * m;
        if lam <= 0.0 {
            continue;
        }
        let count = Poisson::new(lam).map_err(|e| Error::Usage(e.to_string()))?.sample(rng) as usize;
        let c = grid.center(cell);
        for _ in 0..count {
            for a in 0..d {
                pts.push(c[a] + h[a] * (rng.random::<f64>() - 0.5));
            }
        }
    }
    Configuration::new(d, pts)
}

/// Summary of the linear-statistic fluctuations across a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub n: usize,
    pub beta: f64,
    pub samples: usize,
    pub mean: BatchEstimate,
    pub variance: BatchEstimate,
    pub predicted_mean: f64,
    pub predicted_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
    pub values: Vec<f64>,
}

impl CltReport {
    /// `|mean| <= 1.96` standard errors.
    pub fn mean_consistent_with_zero(&self) -> bool {
        (self.mean.mean - self.predicted_mean).abs() <= 1.96 * self.mean.std_error
    }

    pub fn variance_ratio(&self) -> f64 {
        self.variance.mean / self.predicted_variance
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, f64); 12] = [
            ("beta", self.beta),
            ("mean", self.mean.mean),
            ("mean_std_error", self.mean.std_error),
            ("variance", self.variance.mean),
            ("variance_std_error", self.variance.std_error),
            ("predicted_mean", self.predicted_mean),
            ("predicted_variance", self.predicted_variance),
            ("variance_ratio", self.variance_ratio()),
            ("skewness", self.skewness),
            ("excess_kurtosis", self.excess_kurtosis),
            ("ks_distance", self.ks_distance),
            ("batches", self.mean.batches as f64),
        ];
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "samples = {}", self.samples);
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v:.16e}");
        }
        s
    }
}

/// Default number of batches for the batch-means error bars.
pub const CLT_BATCHES: usize = 32;

/// Fluctuations of `sum f(x_i)` over the snapshots of a two-dimensional log-gas run with
/// quadratic confinement, against the Gaussian prediction for `f` supported inside the droplet.
pub fn clt_harness(samples: &SampleSet, f: &TestFunction, reference: &dyn MeanFieldReference, beta: f64) -> Result<CltReport> {
    let p = &samples.params;
    if p.kernel.family() != KernelFamily::Log2 || p.kernel.dim() != 2 {
        return Err(Error::Unsupported("the fluctuation prediction is implemented for the 2-d log gas".into()));
    }
    let ExternalPotential::Quadratic { alpha } = p.potential else {
        return Err(Error::Unsupported("the fluctuation prediction needs a quadratic confinement".into()));
    };
    if !(alpha > 0.0) {
        return Err(Error::Unsupported("the fluctuation prediction needs a confining potential".into()));
    }
    let droplet = (0.5 / alpha).sqrt();
    let (center, radius) = match f {
        TestFunction::Bump { center, radius, .. } => (center, *radius),
        TestFunction::Constant(_) => return Err(Error::Unsupported("constant test functions are not supported by the harness".into())),
    };
    if distance(center, &[0.0, 0.0]) + radius >= droplet {
        return Err(Error::Unsupported(format!(
            "test function support (centre {center:?}, radius {radius}) must lie inside the droplet of radius {droplet}"
        )));
    }
    if !(beta > 0.0) {
        return usage("beta must be positive");
    }
    let integral = f.integrate(reference);
    let n = p.n as f64;
    let values: Vec<f64> = samples.snapshots.iter().map(|c| c.points().map(|x| f.value(x)).sum::<f64>() - n * integral).collect();
    if values.len() < 2 * CLT_BATCHES {
        return usage(format!("the harness needs at least {} snapshots, got {}", 2 * CLT_BATCHES, values.len()));
    }
    let m = batch_means(&values, CLT_BATCHES)?;
    let centered: Vec<f64> = values.iter().map(|v| (v - m.mean) * (v - m.mean)).collect();
    let var = batch_means(&centered, CLT_BATCHES)?;
    let m2 = mean(&centered);
    let m3 = mean(&values.iter().map(|v| (v - m.mean).powi(3)).collect::<Vec<_>>());
    let m4 = mean(&values.iter().map(|v| (v - m.mean).powi(4)).collect::<Vec<_>>());
    Ok(CltReport {
        n: p.n,
        beta,
        samples: values.len(),
        mean: m,
        variance: var,
        predicted_mean: 0.0,
        predicted_variance: f.gradient_energy(2) / (2.0 * PI * beta),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        ks_distance: ks_normal_fitted(&values),
        values,
    })
}

/// Number variance of blown-up counts in centred balls.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberVariance {
    /// Ball radii in microscopic units.
    pub radii: Vec<f64>,
    pub mean_count: Vec<f64>,
    pub variance: Vec<f64>,
    /// Standard error of the variance estimate.
    pub variance_std_error: Vec<f64>,
}

impl NumberVariance {
    /// Log-log slope of the variance against the radius, with its standard error.
    pub fn growth_exponent(&self) -> Result<(f64, f64)> {
        let rows: Vec<Vec<f64>> = self.radii.iter().map(|r| vec![1.0, r.ln()]).collect();
        let y: Vec<f64> = self.variance.iter().map(|v| v.ln()).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return usage("number variance vanishes at some radius");
        }
        let fit = least_squares(&rows, &y)?;
        Ok((fit.coefficients[1], fit.std_errors[1]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,mean_count,variance,variance_std_error\n");
        for i in 0..self.radii.len() {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", self.radii[i], self.mean_count[i], self.variance[i], self.variance_std_error[i]);
        }
        s
    }
}

/// Variance of the point count in `B(center, R / scale)` across configurations, `R` in
/// microscopic units. The blow-up scale uses the mean configuration size, so Poisson input
/// with a fluctuating count is accepted.
pub fn number_variance(configs: &[Configuration<f64>], reference: &dyn MeanFieldReference, center: &[f64], radii: &[f64]) -> Result<NumberVariance> {
    if configs.len() < 2 {
        return usage("number variance needs at least two configurations");
    }
    let n = configs.iter().map(|c| c.len() as f64).sum::<f64>() / configs.len() as f64;
    let (rho, _) = blow_up_scale(1, reference, center)?;
    let scale = (n * rho).powf(1.0 / center.len() as f64);
    let k = configs.len() as f64;
    let mut out = NumberVariance { radii: radii.to_vec(), mean_count: vec![], variance: vec![], variance_std_error: vec![] };
    for &r in radii {
        let counts: Vec<f64> = configs.iter().map(|c| count_in_ball(c, center, r / scale) as f64).collect();
        let m = mean(&counts);
        let dev: Vec<f64> = counts.iter().map(|c| (c - m) * (c - m)).collect();
        let v = dev.iter().sum::<f64>() / (k - 1.0);
        let m4 = mean(&dev.iter().map(|d| d * d).collect::<Vec<_>>());
        out.mean_count.push(m);
        out.variance.push(v);
        out.variance_std_error.push(((m4 - v * v).max(0.0) / k).sqrt());
    }
    Ok(out)
}

/// Radial two-point function in microscopic units.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCorrelation {
    pub edges: Vec<f64>,
    pub g: Vec<f64>,
    pub std_error: Vec<f64>,
    pub pair_counts: Vec<f64>,
    /// Bins without any pair.
    pub empty_bins: Vec<usize>,
}

impl PairCorrelation {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,g,std_error,pairs\n");
        for (i, r) in self.centers().iter().enumerate() {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{}", r, self.g[i], self.std_error[i], self.pair_counts[i]);
        }
        s
    }
}

/// Histogram estimate of the blown-up pair correlation around `center`. Reference points are
/// those within `window` (microscopic units) of the centre; partners are all other points, so
/// the window plus the largest bin edge should stay inside the region of constant density.
/// The normalization is by the unit density of the blown-up process.
pub fn pair_correlation(
    configs: &[Configuration<f64>],
    reference: &dyn MeanFieldReference,
    center: &[f64],
    window: f64,
    edges: &[f64],
) -> Result<PairCorrelation> {
    if configs.is_empty() || edges.len() < 2 {
        return usage("pair correlation needs configurations and at least one bin");
    }
    let d = center.len();
    let shell: Vec<f64> = edges.windows(2).map(|w| unit_sphere_area(d) / d as f64 * (w[1].powi(d as i32) - w[0].powi(d as i32))).collect();
    let r_max = *edges.last().unwrap();
    let mut per_config = Vec::with_capacity(configs.len());
    let mut pairs = vec![0.0; shell.len()];
    let mut refs_total = 0usize;
    for c in configs {
        let (_, scale) = blow_up_scale(c.len(), reference, center)?;
        let pts: Vec<Vec<f64>> = c.points().map(|p| p.iter().zip(center).map(|(x, o)| scale * (x - o)).collect()).collect();
        let zero = vec![0.0; d];
        let mut dists = Vec::new();
        let mut refs = 0usize;
        for (i, p) in pts.iter().enumerate() {
            if distance(p, &zero) > window {
                continue;
            }
            refs += 1;
            for (j, q) in pts.iter().enumerate() {
                if i != j {
                    let r = distance(p, q);
                    if r < r_max {
                        dists.push(r);
                    }
                }
            }
        }
        let h = histogram(dists, edges);
        refs_total += refs;
        for (a, b) in pairs.iter_mut().zip(&h) {
            *a += b;
        }
        if refs > 0 {
            per_config.push(h.iter().zip(&shell).map(|(n, s)| n / (refs as f64 * s)).collect::<Vec<f64>>());
        }
    }
    if refs_total == 0 {
        return usage("no reference points inside the window");
    }
    let g: Vec<f64> = pairs.iter().zip(&shell).map(|(n, s)| n / (refs_total as f64 * s)).collect();
    let k = per_config.len() as f64;
    let std_error = (0..shell.len())
        .map(|b| {
            if k < 2.0 {
                return f64::NAN;
            }
            let m = per_config.iter().map(|v| v[b]).sum::<f64>() / k;
            (per_config.iter().map(|v| (v[b] - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        })
        .collect();
    let empty_bins = pairs.iter().enumerate().filter(|(_, &n)| n == 0.0).map(|(i, _)| i).collect();
    Ok(PairCorrelation { edges: edges.to_vec(), g, std_error, pair_counts: pairs, empty_bins })
}
