//! Two-dimensional unimodular lattices, Epstein zeta functions, and periodic
//! (torus) Green functions with the renormalized jellium energy built on them.

use std::f64::consts::PI;

use crate::error::{usage, Error, Result};
use crate::kernel::{InteractionKernel, KernelFamily};
use crate::special::{exp_integral_e1, gamma, upper_incomplete_gamma};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Unimodular lattice spanned by `(1,0)/sqrt(y)` and `(x,y)/sqrt(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice2D {
    pub x: f64,
    pub y: f64,
}

impl Lattice2D {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(y > 0.0 && x.is_finite() && y.is_finite()) {
            return usage("lattice parameter needs Im(tau) > 0");
        }
        Ok(Self { x, y })
    }

    pub fn square() -> Self {
        Self { x: 0.0, y: 1.0 }
    }

    pub fn triangular() -> Self {
        Self { x: 0.5, y: 0.75f64.sqrt() }
    }

    /// Columns `u`, `v` as `[u0, v0, u1, v1]` (row-major 2x2).
    pub fn basis(&self) -> [f64; 4] {
        let s = self.y.sqrt().recip();
        [s, s * self.x, 0.0, s * self.y]
    }

    pub fn is_reduced(&self, slack: f64) -> bool {
        self.x.abs() <= 0.5 + slack && self.x * self.x + self.y * self.y >= 1.0 - slack
    }
}

/// Map `tau` into `|x| <= 1/2`, `|tau| >= 1` with `tau -> tau + 1` and `tau -> -1/tau`.
pub fn reduce_to_fundamental_domain(tau: Lattice2D) -> Lattice2D {
    let (mut x, mut y) = (tau.x, tau.y);
    for _ in 0..10_000 {
        x -= x.round();
        let n = x * x + y * y;
        if n >= 1.0 {
            break;
        }
        x = -x / n;
        y /= n;
    }
    Lattice2D { x, y }
}

/// Integer vectors `m` with `|B m| <= radius` for a `d x d` row-major basis `B`.
fn lattice_vectors(basis: &[f64], d: usize, radius: f64) -> Vec<Vec<f64>> {
    let inv = invert(basis, d).expect("lattice basis is singular");
    let bounds: Vec<i64> = (0..d)
        .map(|i| {
            let row: f64 = (0..d).map(|j| inv[i * d + j].powi(2)).sum::<f64>().sqrt();
            (radius * row).ceil() as i64
        })
        .collect();
    let mut out = Vec::new();
    let mut m = bounds.iter().map(|b| -b).collect::<Vec<i64>>();
    let r2 = radius * radius;
    loop {
        let p: Vec<f64> = (0..d).map(|i| (0..d).map(|j| basis[i * d + j] * m[j] as f64).sum()).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= r2 {
            out.push(p);
        }
        let mut a = 0;
        loop {
            if a == d {
                return out;
            }
            m[a] += 1;
            if m[a] <= bounds[a] {
                break;
            }
            m[a] = -bounds[a];
            a += 1;
        }
    }
}

pub(crate) fn invert(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs()))?;
        if a[p * d + c].abs() < 1e-300 {
            return None;
        }
        for j in 0..d {
            a.swap(c * d + j, p * d + j);
            inv.swap(c * d + j, p * d + j);
        }
        let piv = a[c * d + c];
        for j in 0..d {
            a[c * d + j] /= piv;
            inv[c * d + j] /= piv;
        }
        for i in 0..d {
            if i != c {
                let f = a[i * d + c];
                for j in 0..d {
                    a[i * d + j] -= f * a[c * d + j];
                    inv[i * d + j] -= f * inv[c * d + j];
                }
            }
        }
    }
    Some(inv)
}

fn determinant(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => unimplemented!("determinant for d > 3"),
    }
}

/// Epstein zeta `sum_{p != 0} |p|^{-s}` with the theta-function split at `lambda`.
pub fn epstein_zeta_split(lattice: Lattice2D, s: f64, lambda: f64) -> Result<f64> {
    if !(s > 0.0) {
        return usage("epstein zeta needs s > 0");
    }
    if !(lambda > 0.0) {
        return usage("splitting parameter must be positive");
    }
    let b = lattice.basis();
    // the dual of a unimodular planar lattice is the lattice rotated by a right angle
    let cut = 46.0;
    let direct = lattice_vectors(&b, 2, (cut / (PI * lambda)).sqrt());
    let dual = lattice_vectors(&b, 2, (cut * lambda / PI).sqrt());
    let near_pole = (s - 2.0).abs() < 1e-9;
    let mut lam = 0.0;
    for p in &direct {
        let q = PI * (p[0] * p[0] + p[1] * p[1]);
        if q > 0.0 {
            lam += q.powf(-0.5 * s) * upper_incomplete_gamma(0.5 * s, lambda * q);
        }
    }
    for p in &dual {
        let q = PI * (p[0] * p[0] + p[1] * p[1]);
        if q > 0.0 {
            lam += q.powf(0.5 * s - 1.0) * upper_incomplete_gamma(1.0 - 0.5 * s, q / lambda);
        }
    }
    lam -= 2.0 * lambda.powf(0.5 * s) / s;
    if near_pole {
        // constant term of the Laurent expansion at the pole s = 2
        lam += lambda.ln();
        return Ok(PI * lam + PI * (PI.ln() + EULER_GAMMA));
    }
    lam += 2.0 * lambda.powf(0.5 * s - 1.0) / (s - 2.0);
    Ok(lam * PI.powf(0.5 * s) / gamma(0.5 * s))
}

/// Epstein zeta of a unimodular lattice. For `s <= 2` this is the analytic continuation
/// (the value at `s = 2` is the finite part at the pole).
pub fn epstein_zeta(lattice: Lattice2D, s: f64) -> Result<f64> {
    epstein_zeta_split(lattice, s, 1.0)
}

/// Options for [`minimize_zeta`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaSearch {
    pub start: Lattice2D,
    pub max_iter: usize,
    /// Stop once a full step moves `tau` by less than this.
    pub tol: f64,
    pub fd_step: f64,
}

impl Default for ZetaSearch {
    fn default() -> Self {
        Self { start: Lattice2D { x: 0.1, y: 1.3 }, max_iter: 500, tol: 1e-9, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaMinimum {
    pub tau: Lattice2D,
    pub value: f64,
    pub iterations: usize,
    pub trace: Vec<(f64, f64, f64)>,
}

/// Minimize `epstein_zeta(., s)` over lattices by descent in the upper half plane with the
/// hyperbolic metric, reducing into the fundamental domain after every step.
pub fn minimize_zeta(s: f64, search: &ZetaSearch) -> Result<ZetaMinimum> {
    let canonical = |t: Lattice2D| {
        let r = reduce_to_fundamental_domain(t);
        Lattice2D { x: r.x.abs(), y: r.y }
    };
    let f = |t: Lattice2D| epstein_zeta(t, s);
    let mut tau = canonical(Lattice2D::new(search.start.x, search.start.y)?);
    let mut value = f(tau)?;
    let mut trace = vec![(tau.x, tau.y, value)];
    let mut step = 0.1;
    for it in 0..search.max_iter {
        let h = search.fd_step * tau.y;
        let gx = (f(Lattice2D { x: tau.x + h, ..tau })? - f(Lattice2D { x: tau.x - h, ..tau })?) / (2.0 * h);
        let gy = (f(Lattice2D { y: tau.y + h, ..tau })? - f(Lattice2D { y: tau.y - h, ..tau })?) / (2.0 * h);
        // hyperbolic gradient: metric (dx^2 + dy^2)/y^2
        let (dx, dy) = (-gx * tau.y * tau.y, -gy * tau.y * tau.y);
        let norm = (dx * dx + dy * dy).sqrt();
        if norm == 0.0 {
            return Ok(ZetaMinimum { tau, value, iterations: it, trace });
        }
        let mut accepted = None;
        let mut t = step;
        while t * norm > 1e-15 {
            let cand = Lattice2D { x: tau.x + t * dx / norm * tau.y, y: tau.y + t * dy / norm * tau.y };
            if cand.y > 0.0 {
                let cand = canonical(cand);
                let v = f(cand)?;
                if v < value - 1e-4 * t * norm * tau.y {
                    accepted = Some((cand, v, t));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, v, t)) => {
                let moved = ((cand.x - tau.x).powi(2) + (cand.y - tau.y).powi(2)).sqrt();
                tau = cand;
                value = v;
                trace.push((tau.x, tau.y, value));
                step = (2.0 * t).min(0.5);
                if moved < search.tol {
                    return Ok(ZetaMinimum { tau, value, iterations: it + 1, trace });
                }
            }
            None => return Ok(ZetaMinimum { tau, value, iterations: it + 1, trace }),
        }
    }
    Err(Error::NonConvergence {
        iterations: search.max_iter,
        residual: step,
        context: format!("zeta minimization ended at tau = ({}, {})", tau.x, tau.y),
    })
}

/// Flat torus `R^d / B Z^d` with a `d x d` row-major basis (columns are periods).
#[derive(Debug, Clone, PartialEq)]
pub struct Torus {
    dim: usize,
    basis: Vec<f64>,
    inverse: Vec<f64>,
}

impl Torus {
    pub fn new(dim: usize, basis: Vec<f64>) -> Result<Self> {
        if basis.len() != dim * dim || dim == 0 || dim > 3 {
            return usage("torus basis must be d x d with 1 <= d <= 3");
        }
        let inverse = invert(&basis, dim).ok_or_else(|| Error::Usage("torus basis is singular".into()))?;
        Ok(Self { dim, basis, inverse })
    }

    /// Box `[0, L)^d`.
    pub fn cube(dim: usize, side: f64) -> Result<Self> {
        let mut b = vec![0.0; dim * dim];
        for i in 0..dim {
            b[i * dim + i] = side;
        }
        Self::new(dim, b)
    }

    /// Torus of a 2-d lattice scaled so the cell has the given area.
    pub fn from_lattice(lattice: Lattice2D, area: f64) -> Result<Self> {
        let s = area.sqrt();
        Self::new(2, lattice.basis().iter().map(|b| b * s).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn volume(&self) -> f64 {
        determinant(&self.basis, self.dim).abs()
    }

    /// Representative of `x` with fractional coordinates in `[-1/2, 1/2)`.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let frac: Vec<f64> = (0..d)
            .map(|i| {
                let f: f64 = (0..d).map(|j| self.inverse[i * d + j] * x[j]).sum();
                f - (f + 0.5).floor()
            })
            .collect();
        (0..d).map(|i| (0..d).map(|j| self.basis[i * d + j] * frac[j]).sum()).collect()
    }

    /// Shortest distance between `x` and `y` modulo the periods.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let w = self.wrap(&diff);
        let reach = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        lattice_vectors(&self.basis, self.dim, 2.0 * reach + 1e-12)
            .iter()
            .map(|l| w.iter().zip(l).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Reciprocal basis `2 pi B^{-T}`.
    fn dual_basis(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = 2.0 * PI * self.inverse[j * d + i];
            }
        }
        out
    }
}

/// Zero-mean periodic Green function `G` with `-Laplacian G = c_d (delta - 1/|cell|)`
/// (log on a circle in 1-d), evaluated by Ewald summation.
#[derive(Debug, Clone)]
pub struct PeriodicGreen {
    family: KernelFamily,
    torus: Torus,
    splitting: f64,
    real_radius: f64,
    reciprocal: Vec<(Vec<f64>, f64)>,
    constant: f64,
}

impl PeriodicGreen {
    /// `tolerance` bounds the neglected Ewald tails (both sides decay like `exp(-X)` with
    /// `X = -ln(tolerance)`).
    pub fn new(kernel: &InteractionKernel, torus: &Torus, tolerance: f64) -> Result<Self> {
        let d = torus.dim();
        if kernel.dim() != d {
            return usage("kernel and torus dimensions differ");
        }
        let family = kernel.family();
        let x = (-tolerance.clamp(1e-300, 0.1).ln()).max(4.0);
        let vol = torus.volume();
        let splitting = PI.sqrt() / vol.powf(1.0 / d as f64);
        let (real_radius, reciprocal, constant) = match family {
            KernelFamily::Log1 => (0.0, Vec::new(), 0.0),
            KernelFamily::Log2 | KernelFamily::Coulomb => {
                let c = kernel.laplace_constant()?;
                let kmax = 2.0 * splitting * x.sqrt();
                let recip = lattice_vectors(&torus.dual_basis(), d, kmax)
                    .into_iter()
                    .filter_map(|k| {
                        let k2: f64 = k.iter().map(|v| v * v).sum();
                        (k2 > 0.0).then(|| {
                            let w = c / vol * (-k2 / (4.0 * splitting * splitting)).exp() / k2;
                            (k, w)
                        })
                    })
                    .collect();
                (x.sqrt() / splitting, recip, -c / (4.0 * splitting * splitting * vol))
            }
            KernelFamily::Riesz => {
                return Err(Error::Unsupported("periodic Green function needs a log or Coulomb kernel".into()))
            }
        };
        Ok(Self { family, torus: torus.clone(), splitting, real_radius, reciprocal, constant })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    fn short_range(&self, r: f64) -> f64 {
        let a = self.splitting;
        match self.family {
            KernelFamily::Log2 => 0.5 * exp_integral_e1(a * a * r * r),
            _ => libm::erfc(a * r) / r,
        }
    }

    fn long_range(&self, x: &[f64]) -> f64 {
        self.reciprocal
            .iter()
            .map(|(k, w)| w * k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().cos())
            .sum::<f64>()
            + self.constant
    }

    /// `G(x)`; `x` must not be a lattice point.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let w = self.torus.wrap(x);
        if let KernelFamily::Log1 = self.family {
            let len = self.torus.basis()[0].abs();
            let s = (PI * w[0] / len).sin().abs();
            if s == 0.0 {
                return Err(Error::Domain("periodic Green function at a lattice point".into()));
            }
            return Ok(-(2.0 * s).ln());
        }
        let reach = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut short = 0.0;
        for l in lattice_vectors(self.torus.basis(), self.torus.dim(), self.real_radius + reach) {
            let r = w.iter().zip(&l).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(Error::Domain("periodic Green function at a lattice point".into()));
            }
            short += self.short_range(r);
        }
        Ok(short + self.long_range(&w))
    }

    /// `lim_{x -> 0} G(x) - g(x)`.
    pub fn regular_part_at_zero(&self) -> f64 {
        let a = self.splitting;
        let local = match self.family {
            KernelFamily::Log1 => return -(2.0 * PI / self.torus.basis()[0].abs()).ln(),
            KernelFamily::Log2 => -a.ln() - 0.5 * EULER_GAMMA,
            _ => -2.0 * a / PI.sqrt(),
        };
        let mut short = 0.0;
        for l in lattice_vectors(self.torus.basis(), self.torus.dim(), self.real_radius) {
            let r = l.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 0.0 {
                short += self.short_range(r);
            }
        }
        local + short + self.long_range(&vec![0.0; self.torus.dim()])
    }
}

/// Points in a torus cell whose volume equals the number of points (unit density).
#[derive(Debug, Clone, PartialEq)]
pub struct TorusConfiguration {
    torus: Torus,
    points: Vec<Vec<f64>>,
}

impl TorusConfiguration {
    pub fn new(torus: Torus, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 || points.iter().any(|p| p.len() != torus.dim() || p.iter().any(|v| !v.is_finite())) {
            return usage("torus configuration needs finite points of the torus dimension");
        }
        let vol = torus.volume();
        if (vol - n as f64).abs() > 1e-10 * n as f64 {
            return usage(format!("cell volume {vol} differs from the point count {n}: background is not neutral"));
        }
        Ok(Self { torus, points })
    }

    /// One point per cell of a unimodular lattice.
    pub fn lattice(lattice: Lattice2D) -> Result<Self> {
        Self::new(Torus::from_lattice(lattice, 1.0)?, vec![vec![0.0, 0.0]])
    }

    /// `n` equally spaced points on a circle of length `n`.
    pub fn equally_spaced(n: usize) -> Result<Self> {
        Self::new(Torus::cube(1, n as f64)?, (0..n).map(|i| vec![i as f64]).collect())
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let points = self.points.iter().map(|p| p.iter().zip(shift).map(|(a, b)| a + b).collect()).collect();
        Self { torus: self.torus.clone(), points }
    }

    /// The same periodic configuration described on a cell enlarged by integer factors.
    pub fn replicated(&self, factors: &[usize]) -> Result<Self> {
        let d = self.torus.dim();
        let b = self.torus.basis();
        let mut basis = b.to_vec();
        for i in 0..d {
            for j in 0..d {
                basis[i * d + j] = b[i * d + j] * factors[j] as f64;
            }
        }
        let mut points = Vec::new();
        let total: usize = factors.iter().product();
        for c in 0..total {
            let mut rest = c;
            let mut shift = vec![0.0; d];
            for (j, f) in factors.iter().enumerate() {
                let m = (rest % f) as f64;
                rest /= f;
                for (i, s) in shift.iter_mut().enumerate() {
                    *s += b[i * d + j] * m;
                }
            }
            for p in &self.points {
                points.push(p.iter().zip(&shift).map(|(a, s)| a + s).collect());
            }
        }
        Self::new(Torus::new(d, basis)?, points)
    }

    pub fn min_distance(&self) -> f64 {
        let n = self.points.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.min(self.torus.distance(&self.points[i], &self.points[j]));
            }
        }
        if n == 1 {
            // distance to the nearest image of itself
            best = lattice_vectors(self.torus.basis(), self.torus.dim(), self.torus.volume().powf(1.0 / self.torus.dim() as f64) * 4.0)
                .iter()
                .map(|l| l.iter().map(|v| v * v).sum::<f64>().sqrt())
                .filter(|&r| r > 0.0)
                .fold(f64::INFINITY, f64::min);
        }
        best
    }
}

/// Per-unit-volume energy `(1/c_d)(int_cell |grad H_eta|^2 - n c_d g(eta)) / n` of a periodic
/// configuration with shells of radius `eta` in a unit neutralizing background.
///
/// Shells see each other through the torus Green function, and for `2 eta` below the minimal
/// distance the shell averages are exact: every pair term shifts by `c_d eta^2 / (d |cell|)`.
/// For `log1` on a circle (no Laplace structure) `eta` plays no role and the value is
/// `(1/n)(sum_{i != j} G(x_i - x_j) + n R(0))`.
pub fn torus_renormalized_energy(
    config: &TorusConfiguration,
    kernel: &InteractionKernel,
    eta: f64,
    tolerance: f64,
) -> Result<TorusEnergy> {
    if !(eta > 0.0) {
        return usage("eta must be positive");
    }
    let green = PeriodicGreen::new(kernel, config.torus(), tolerance)?;
    let n = config.len();
    let mut pairs = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let diff: Vec<f64> = config.points[i].iter().zip(&config.points[j]).map(|(a, b)| a - b).collect();
                pairs += green.value(&diff)?;
            }
        }
    }
    let d = config.torus.dim() as f64;
    let base = (pairs + n as f64 * green.regular_part_at_zero()) / n as f64;
    let shell = match kernel.family() {
        KernelFamily::Log1 => 0.0,
        _ => kernel.laplace_constant()? * eta * eta / d,
    };
    let overlapping = 2.0 * eta >= config.min_distance();
    Ok(TorusEnergy { value: base + shell, eta, overlapping })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusEnergy {
    pub value: f64,
    pub eta: f64,
    /// Shells of neighbouring points intersect; the value is then not the shell energy.
    pub overlapping: bool,
}

/// Values at `eta, eta/2, eta/4, ...` and the Richardson extrapolation of the last two
/// assuming an `eta^order` leading error.
pub fn torus_energy_extrapolated(
    config: &TorusConfiguration,
    kernel: &InteractionKernel,
    eta: f64,
    halvings: usize,
    order: f64,
    tolerance: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut values = Vec::with_capacity(halvings + 1);
    let mut e = eta;
    for _ in 0..=halvings {
        values.push(torus_renormalized_energy(config, kernel, e, tolerance)?.value);
        e *= 0.5;
    }
    let n = values.len();
    let limit = if n < 2 {
        values[0]
    } else {
        let f = 2f64.powf(order);
        (f * values[n - 1] - values[n - 2]) / (f - 1.0)
    };
    Ok((values, limit))
}
