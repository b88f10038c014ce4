use std::f64::consts::PI;
use crate::config::Configuration;
use crate::energy::coulomb_metric;
use crate::error::{usage, Error, Result};
use crate::grid::{Grid, GriddedDensity};
use crate::kernel::{InteractionKernel, KernelFamily};
use crate::potential::ExternalPotential;

/// Radius at time `t` of the uniform unit-mass disk spreading under the planar mean-field flow
/// with `V = 0`: `sqrt(R0^2 + 2 t)`.
pub fn patch_reference(r0: f64, t: f64) -> Result<f64> {
    if !(r0 > 0.0) || !(t >= 0.0) {
        return usage("patch_reference needs R0 > 0 and t >= 0");
    }
    Ok((r0 * r0 + 2.0 * t).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldOptions {
    /// Fraction of the positivity-preserving step bound used when the requested step is too large.
    pub cfl: f64,
    /// Record the state every this much time (the initial and final states are always kept).
    pub record_every: f64,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self { cfl: 0.9, record_every: f64::INFINITY }
    }
}

/// Radial density history on `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTrajectory {
    pub edges: Vec<f64>,
    pub times: Vec<f64>,
    /// Density per unit area, one vector per recorded time.
    pub densities: Vec<Vec<f64>>,
    pub dt_requested: f64,
    /// Smallest step actually taken.
    pub dt_min: f64,
    /// Steps shortened by the positivity bound.
    pub cfl_reductions: usize,
    /// Largest change of the total mass over a single step.
    pub max_mass_drift: f64,
}

fn annulus_areas(edges: &[f64]) -> Vec<f64> {
    edges.windows(2).map(|w| PI * (w[1] * w[1] - w[0] * w[0])).collect()
}

impl RadialTrajectory {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn masses(&self, k: usize) -> Vec<f64> {
        annulus_areas(&self.edges).iter().zip(&self.densities[k]).map(|(a, r)| a * r).collect()
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.masses(k).iter().sum()
    }

    /// `int |x|^2 dmu`, exact for the piecewise-constant profile.
    pub fn second_moment(&self, k: usize) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.densities[k])
            .map(|(w, r)| r * 0.5 * PI * (w[1].powi(4) - w[0].powi(4)))
            .sum()
    }

    /// Radius of the uniform disk with the same mass and second moment.
    pub fn effective_radius(&self, k: usize) -> f64 {
        (2.0 * self.second_moment(k) / self.mass(k)).sqrt()
    }

    /// Piecewise-linear interpolation between cell centres (zero beyond the last cell).
    pub fn density_at(&self, k: usize, r: f64) -> f64 {
        let c = self.centers();
        let rho = &self.densities[k];
        if r <= c[0] {
            return rho[0];
        }
        if r >= *self.edges.last().unwrap() {
            return 0.0;
        }
        if r >= c[c.len() - 1] {
            return rho[c.len() - 1];
        }
        let dr = self.edges[1] - self.edges[0];
        let j = (((r - c[0]) / dr).floor() as usize).min(c.len() - 2);
        let w = (r - c[j]) / (c[j + 1] - c[j]);
        (1.0 - w) * rho[j] + w * rho[j + 1]
    }

    /// Sample onto a 2-d grid and renormalize.
    pub fn to_gridded(&self, k: usize, grid: &Grid) -> Result<GriddedDensity> {
        if grid.dim() != 2 {
            return usage("radial profiles map onto 2-d grids");
        }
        let values = (0..grid.len())
            .map(|i| {
                let c = grid.center(i);
                self.density_at(k, c[0].hypot(c[1]))
            })
            .collect();
        GriddedDensity::normalized(grid.clone(), values)
    }
}

/// `d_g` between two radial profiles on the same edges for the planar log kernel.
///
/// Cells are treated as rings at their centres, where `-log max(r, s)` is the interaction of
/// two rings of radii `r` and `s`.
pub fn radial_coulomb_distance(edges: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() + 1 != edges.len() || b.len() != a.len() {
        return usage("profiles do not match the radial edges");
    }
    let area = annulus_areas(edges);
    let sigma: Vec<f64> = (0..a.len()).map(|k| area[k] * (a[k] - b[k])).collect();
    let r: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut tail = vec![0.0; sigma.len() + 1];
    for k in (0..sigma.len()).rev() {
        tail[k] = tail[k + 1] + sigma[k] * r[k].ln();
    }
    let mut inner = 0.0;
    let mut energy = 0.0;
    for k in 0..sigma.len() {
        inner += sigma[k];
        let h = -r[k].ln() * inner - tail[k + 1];
        energy += sigma[k] * h;
    }
    Ok(energy.max(0.0).sqrt())
}

fn radial_derivative(potential: &ExternalPotential, r: f64) -> Result<f64> {
    if potential.is_zero() {
        Ok(0.0)
    } else {
        potential.radial_derivative(r)
    }
}

/// Finite-volume solver for the radial planar mean-field equation
/// `d_t mu = div(grad(h^mu + V) mu) + (1/beta) Laplacian mu`, `h^mu = -log * mu`.
///
/// Face velocity `u = M(r)/r - V'(r)` from the enclosed mass; upwind transport, exponentially
/// fitted fluxes when diffusion is present, no-flux walls.
#[allow(clippy::too_many_arguments)]
pub fn meanfield_radial_solve(
    r_max: f64,
    cells: usize,
    initial: impl Fn(f64) -> f64,
    potential: &ExternalPotential,
    beta: Option<f64>,
    dt: f64,
    t_end: f64,
    options: &MeanFieldOptions,
) -> Result<RadialTrajectory> {
    if !(r_max > 0.0) || cells < 2 {
        return usage("radial grid needs r_max > 0 and at least two cells");
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return usage("time step must be positive and the final time non-negative");
    }
    if let Some(b) = beta {
        if !(b > 0.0) {
            return usage("beta must be positive");
        }
    }
    let dr = r_max / cells as f64;
    let edges: Vec<f64> = (0..=cells).map(|k| k as f64 * dr).collect();
    let area = annulus_areas(&edges);
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    // cell averages from 16 area-weighted midpoints
    let mut mass: Vec<f64> = (0..cells)
        .map(|k| {
            let sub = 16;
            (0..sub)
                .map(|q| {
                    let a = edges[k] + q as f64 * dr / sub as f64;
                    let b = a + dr / sub as f64;
                    initial(0.5 * (a + b)) * PI * (b * b - a * a)
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) || mass.iter().any(|m| *m < 0.0 || !m.is_finite()) {
        return usage("initial radial density must be non-negative with positive mass");
    }
    mass.iter_mut().for_each(|m| *m /= total);
    let dprime: Vec<f64> = edges.iter().map(|&r| radial_derivative(potential, r)).collect::<Result<_>>()?;
    let diff = beta.map_or(0.0, |b| 1.0 / b);
    let density = |m: &[f64]| -> Vec<f64> { m.iter().zip(&area).map(|(a, b)| a / b).collect() };
    let mut traj = RadialTrajectory {
        edges: edges.clone(),
        times: vec![0.0],
        densities: vec![density(&mass)],
        dt_requested: dt,
        dt_min: dt,
        cfl_reductions: 0,
        max_mass_drift: 0.0,
    };
    let mut flux = vec![0.0; cells + 1];
    let mut rate = vec![0.0; cells];
    let mut t = 0.0;
    let mut next_record = options.record_every;
    while t < t_end * (1.0 - 1e-12) {
        let rho = density(&mass);
        // face fluxes, outward positive
        let mut inside = 0.0;
        rate.iter_mut().for_each(|r| *r = 0.0);
        for f in 1..cells {
            inside += mass[f - 1];
            let r = edges[f];
            let u = inside / r - dprime[f];
            let len = 2.0 * PI * r;
            let (q, out_l, out_r) = face_flux(u, diff, centers[f] - centers[f - 1], rho[f - 1], rho[f]);
            flux[f] = len * q;
            rate[f - 1] += len * out_l / area[f - 1];
            rate[f] += len * out_r / area[f];
        }
        let bound = options.cfl / rate.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        let mut h = dt.min(t_end - t).min(next_record - t);
        if h > bound {
            h = bound;
            traj.cfl_reductions += 1;
        }
        traj.dt_min = traj.dt_min.min(h);
        let before: f64 = mass.iter().sum();
        for k in 0..cells {
            mass[k] += h * (flux[k] - flux[k + 1]);
        }
        let after: f64 = mass.iter().sum();
        traj.max_mass_drift = traj.max_mass_drift.max((after - before).abs());
        t += h;
        if t >= next_record * (1.0 - 1e-12) {
            traj.times.push(t);
            traj.densities.push(density(&mass));
            next_record += options.record_every;
        }
    }
    if traj.times.last() != Some(&t) {
        traj.times.push(t);
        traj.densities.push(density(&mass));
    }
    Ok(traj)
}

/// Bernoulli function `x / (e^x - 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Face flux for drift `u` and diffusion `diff` between left and right densities `l`, `r` whose
/// centres are `delta` apart, plus the outflow coefficients for the two cells. Exponentially
/// fitted (Scharfetter-Gummel), reducing to upwind transport when `diff = 0`.
fn face_flux(u: f64, diff: f64, delta: f64, l: f64, r: f64) -> (f64, f64, f64) {
    if diff == 0.0 {
        return (u.max(0.0) * l + u.min(0.0) * r, u.max(0.0), (-u).max(0.0));
    }
    let d = diff / delta;
    let p = u / d;
    let (out_l, out_r) = (d * bernoulli(-p), d * bernoulli(p));
    (out_l * l - out_r * r, out_l, out_r)
}

/// Density history of the 1-d solver.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    pub densities: Vec<GriddedDensity>,
    pub dt_requested: f64,
    pub dt_min: f64,
    pub cfl_reductions: usize,
    pub max_mass_drift: f64,
}

/// Face drift `-d/dx h^mu` for the 1-d log kernel by a midpoint sum over cells. Faces sit half a
/// cell away from every centre, so no cell is singular; pairing the cells at equal distance on
/// either side makes the sum exactly antisymmetric under reflection.
struct HilbertSum {
    weights: Vec<f64>,
}

impl HilbertSum {
    fn new(n: usize, h: f64) -> Self {
        Self { weights: (0..n).map(|d| 1.0 / ((d as f64 + 0.5) * h)).collect() }
    }

    /// Drift at the `n + 1` faces.
    fn apply(&self, masses: &[f64]) -> Vec<f64> {
        let n = masses.len();
        (0..=n)
            .map(|f| {
                let mut acc = 0.0;
                for (d, w) in self.weights.iter().enumerate() {
                    let left = if d < f { masses[f - 1 - d] } else { 0.0 };
                    let right = if f + d < n { masses[f + d] } else { 0.0 };
                    if d >= f && f + d >= n {
                        break;
                    }
                    acc += w * (left - right);
                }
                acc
            })
            .collect()
    }
}

fn faces_1d(grid: &Grid) -> Vec<f64> {
    let n = grid.len();
    let h = grid.spacing()[0];
    let mid = 0.5 * (grid.lower()[0] + grid.upper()[0]);
    (0..=n).map(|f| mid + (f as f64 - 0.5 * n as f64) * h).collect()
}

/// Finite-volume solver for the 1-d log-gas McKean equation
/// `d_t mu = d_x((h^mu + V)' mu) + (1/beta) mu''` with no-flux walls at the grid boundary.
pub fn meanfield_1d_solve(
    initial: &GriddedDensity,
    potential: &ExternalPotential,
    beta: Option<f64>,
    dt: f64,
    t_end: f64,
    options: &MeanFieldOptions,
) -> Result<MeanFieldTrajectory> {
    let grid = initial.grid().clone();
    if grid.dim() != 1 {
        return usage("the 1-d mean-field solver needs a 1-d grid");
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return usage("time step must be positive and the final time non-negative");
    }
    if let Some(b) = beta {
        if !(b > 0.0) {
            return usage("beta must be positive");
        }
    }
    let n = grid.len();
    let h = grid.spacing()[0];
    let faces = faces_1d(&grid);
    let vprime: Vec<f64> = faces.iter().map(|&x| potential.gradient(&[x])[0]).collect();
    let hilbert = HilbertSum::new(n, h);
    let diff = beta.map_or(0.0, |b| 1.0 / b);
    let mut mass = initial.masses();
    let mut traj = MeanFieldTrajectory {
        times: vec![0.0],
        densities: vec![initial.clone()],
        dt_requested: dt,
        dt_min: dt,
        cfl_reductions: 0,
        max_mass_drift: 0.0,
    };
    let mut flux = vec![0.0; n + 1];
    let mut rate = vec![0.0; n];
    let mut t = 0.0;
    let mut next_record = options.record_every;
    while t < t_end * (1.0 - 1e-12) {
        let drift = hilbert.apply(&mass);
        rate.iter_mut().for_each(|r| *r = 0.0);
        for f in 1..n {
            let u = drift[f] - vprime[f];
            let (q, out_l, out_r) = face_flux(u, diff, h, mass[f - 1] / h, mass[f] / h);
            flux[f] = q;
            rate[f - 1] += out_l / h;
            rate[f] += out_r / h;
        }
        let bound = options.cfl / rate.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
        let mut step = dt.min(t_end - t).min(next_record - t);
        if step > bound {
            step = bound;
            traj.cfl_reductions += 1;
        }
        traj.dt_min = traj.dt_min.min(step);
        let before: f64 = mass.iter().sum();
        for k in 0..n {
            mass[k] += step * (flux[k] - flux[k + 1]);
        }
        let after: f64 = mass.iter().sum();
        traj.max_mass_drift = traj.max_mass_drift.max((after - before).abs());
        t += step;
        if t >= next_record * (1.0 - 1e-12) {
            traj.times.push(t);
            traj.densities.push(GriddedDensity::unnormalized(grid.clone(), mass.iter().map(|m| m / h).collect())?);
            next_record += options.record_every;
        }
    }
    if traj.times.last() != Some(&t) {
        traj.times.push(t);
        traj.densities.push(GriddedDensity::unnormalized(grid.clone(), mass.iter().map(|m| m / h).collect())?);
    }
    Ok(traj)
}

/// `(d/dt) mu` of the 1-d scheme at a given density (for stationarity checks).
pub fn meanfield_1d_rate(density: &GriddedDensity, potential: &ExternalPotential, beta: Option<f64>) -> Result<Vec<f64>> {
    let grid = density.grid();
    if grid.dim() != 1 {
        return usage("the 1-d mean-field solver needs a 1-d grid");
    }
    let n = grid.len();
    let h = grid.spacing()[0];
    let faces = faces_1d(grid);
    let hilbert = HilbertSum::new(n, h);
    let mass = density.masses();
    let drift = hilbert.apply(&mass);
    let diff = beta.map_or(0.0, |b| 1.0 / b);
    let mut flux = vec![0.0; n + 1];
    for f in 1..n {
        let u = drift[f] - potential.gradient(&[faces[f]])[0];
        flux[f] = face_flux(u, diff, h, mass[f - 1] / h, mass[f] / h).0;
    }
    Ok((0..n).map(|k| (flux[k] - flux[k + 1]) / h).collect())
}

fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let s = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![s * a.cos(), s * a.sin(), z]
                })
                .collect()
        }
    }
}

/// The empirical measure with every atom replaced by the uniform measure on the sphere of
/// radius `eta`, deposited on `grid` by multilinear (cloud-in-cell) weights.
pub fn smeared_empirical_density(config: &Configuration<f64>, grid: &Grid, eta: f64) -> Result<GriddedDensity> {
    if !(eta > 0.0) {
        return usage("eta must be positive");
    }
    let d = grid.dim();
    if config.dim() != d {
        return usage("configuration and grid dimensions differ");
    }
    let h = grid.spacing();
    let hmin = h.iter().copied().fold(f64::INFINITY, f64::min);
    let count = match d {
        1 => 2,
        2 => ((8.0 * 2.0 * PI * eta / hmin).ceil() as usize).max(32),
        _ => ((8.0 * 4.0 * PI * eta * eta / (hmin * hmin)).ceil() as usize).max(64),
    };
    let dirs = sphere_directions(d, count);
    let weight = 1.0 / (config.len() * dirs.len()) as f64;
    let mut masses = vec![0.0; grid.len()];
    let first: Vec<f64> = (0..d).map(|a| grid.coordinate(a, 0)).collect();
    let mut y = vec![0.0; d];
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for p in config.points() {
        for dir in &dirs {
            for a in 0..d {
                y[a] = p[a] + eta * dir[a];
                let s = (y[a] - first[a]) / h[a];
                if s < 0.0 || s > (grid.shape()[a] - 1) as f64 {
                    return usage(format!("smeared point {y:?} leaves the grid"));
                }
                let b = (s.floor() as usize).min(grid.shape()[a] - 2);
                base[a] = b;
                frac[a] = s - b as f64;
            }
            for corner in 0..(1usize << d) {
                let mut w = weight;
                let mut idx = base.clone();
                for a in 0..d {
                    if corner >> a & 1 == 1 {
                        idx[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                masses[grid.flatten(&idx)] += w;
            }
        }
    }
    let vol = grid.cell_volume();
    GriddedDensity::normalized(grid.clone(), masses.into_iter().map(|m| m / vol).collect())
}

/// `d_g` between the `eta`-smeared empirical measure of `config` and `density`.
pub fn empirical_distance(
    config: &Configuration<f64>,
    density: &GriddedDensity,
    kernel: &InteractionKernel,
    eta: f64,
) -> Result<f64> {
    if matches!(kernel.family(), KernelFamily::Riesz) && !kernel.is_locally_integrable() {
        return Err(Error::Unsupported("d_g needs a locally integrable kernel".into()));
    }
    let smeared = smeared_empirical_density(config, density.grid(), eta)?;
    coulomb_metric(kernel, &smeared, density)
}
