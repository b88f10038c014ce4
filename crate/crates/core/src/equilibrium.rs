//! Equilibrium measures: the minimizer of `I_V` on a grid, its Euler-Lagrange check,
//! the Laplacian formula for Coulomb kernels, and the entropic (thermal) variant.

use rustfft::num_complex::Complex;

use crate::energy::background_potential;
use crate::error::{usage, Error, Result};
use crate::grid::{Convolver, Grid, GriddedDensity};
use crate::kernel::{InteractionKernel, KernelFamily};
use crate::potential::{ExternalPotential, TabulatedPotential};
use crate::reference::MeanFieldReference;
use crate::scalar::compensated_sum;

/// Cells with density above this fraction of the maximum form the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Maximal violations of the two Euler-Lagrange branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElResiduals {
    /// `max |h + V - c|` over the support.
    pub on_support: f64,
    /// `max (c - h - V)_+` off the support.
    pub off_support: f64,
    pub robin_constant: f64,
}

impl ElResiduals {
    pub fn passes(&self, tol: f64) -> bool {
        self.on_support <= tol && self.off_support <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub kernel: InteractionKernel,
    pub density: GriddedDensity,
    pub support: Vec<bool>,
    pub robin_constant: f64,
    /// `I_V` of the discrete minimizer.
    pub energy: f64,
    /// Discrete `int int g dmu dmu`.
    pub self_energy: f64,
    /// Discrete `int V dmu`.
    pub potential_mean: f64,
    pub residuals: ElResiduals,
    /// `h^mu` at the cell centres.
    pub potential: Vec<f64>,
    pub iterations: usize,
    /// Final duality gap `int (h + V) dmu - min (h + V)`.
    pub gap: f64,
    /// Objective values along the accepted iterates.
    pub objective_trace: Vec<f64>,
    interpolant: TabulatedPotential,
}

fn support_mask(values: &[f64]) -> Vec<bool> {
    let max = values.iter().copied().fold(0.0, f64::max);
    values.iter().map(|&v| v > SUPPORT_THRESHOLD * max).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

fn residuals_from(total: &[f64], support: &[bool]) -> ElResiduals {
    let c = median(total.iter().zip(support).filter(|(_, &s)| s).map(|(t, _)| *t).collect());
    let mut on = 0.0f64;
    let mut off = 0.0f64;
    for (t, &s) in total.iter().zip(support) {
        if s {
            on = on.max((t - c).abs());
        } else {
            off = off.max(c - t);
        }
    }
    ElResiduals { on_support: on, off_support: off.max(0.0), robin_constant: c }
}

/// Check `h + V = c` on the support and `h + V >= c` off it, with `c` the median over the support.
pub fn verify_euler_lagrange(
    density: &GriddedDensity,
    support: &[bool],
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
) -> Result<ElResiduals> {
    let grid = density.grid();
    if support.len() != grid.len() {
        return usage("support mask does not match the grid");
    }
    let conv = Convolver::new(kernel, grid)?;
    let h = conv.apply(&density.masses());
    let total: Vec<f64> = (0..grid.len()).map(|i| h[i] + potential.value(&grid.center(i))).collect();
    Ok(residuals_from(&total, support))
}

/// Variation of `g` used by the confinement check: `|g(D/2) - g(D)|`, `D` the box diagonal.
fn kernel_variation(kernel: &InteractionKernel, grid: &Grid) -> f64 {
    let diag = grid.lower().iter().zip(grid.upper()).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    (kernel.value_at(0.5 * diag) - kernel.value_at(diag)).abs()
}

fn check_box(kernel: &InteractionKernel, potential: &ExternalPotential, grid: &Grid, values: &[f64]) -> Result<()> {
    let min_v = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut boundary_min = f64::INFINITY;
    for i in 0..grid.len() {
        let idx = grid.unflatten(i);
        if idx.iter().zip(grid.shape()).any(|(&k, &n)| k == 0 || k + 1 == n) {
            boundary_min = boundary_min.min(values[i]);
        }
    }
    let need = 2.0 * kernel_variation(kernel, grid);
    if boundary_min - min_v < need {
        return usage(format!(
            "box too small for {}: V rises by {:.4} from its minimum to the boundary, need at least {:.4}",
            potential.describe(),
            boundary_min - min_v,
            need
        ));
    }
    Ok(())
}

/// Euclidean projection onto `{w >= 0, sum w = 1}`.
fn project_simplex(y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(y);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - theta).max(0.0);
    }
}

/// Largest eigenvalue of the kernel matrix on zero-sum vectors (power iteration).
fn lipschitz(conv: &Convolver, m: usize) -> f64 {
    let mut v: Vec<f64> = (0..m).map(|i| ((i * 7919 + 13) % 101) as f64 - 50.0).collect();
    let mut lambda = 0.0;
    for _ in 0..60 {
        let mean = v.iter().sum::<f64>() / m as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut w = conv.apply(&v);
        let mean = w.iter().sum::<f64>() / m as f64;
        w.iter_mut().for_each(|x| *x -= mean);
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        v = w;
    }
    lambda.abs()
}

fn objective(w: &[f64], gw: &[f64], v: &[f64]) -> f64 {
    compensated_sum(w.iter().zip(gw).zip(v).map(|((a, g), vv)| a * (0.5 * g + vv)))
}

fn gap(w: &[f64], gw: &[f64], v: &[f64]) -> f64 {
    let p: Vec<f64> = gw.iter().zip(v).map(|(a, b)| a + b).collect();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    compensated_sum(w.iter().zip(&p).map(|(a, b)| a * b)) - min
}

/// Minimize the discretized `I_V` over probability densities on `grid`.
///
/// Accelerated projected gradient (monotone FISTA) on the cell masses; stops once the duality
/// gap `int (h + V) dmu - min (h + V)` falls below `tol`.
pub fn solve_equilibrium(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    if kernel.dim() != grid.dim() {
        return usage("kernel and grid dimensions differ");
    }
    let m = grid.len();
    let v: Vec<f64> = (0..m).map(|i| potential.value(&grid.center(i))).collect();
    check_box(kernel, potential, grid, &v)?;
    let conv = Convolver::new(kernel, grid)?;
    let step = 1.0 / (1.02 * lipschitz(&conv, m));
    let mut x = vec![1.0 / m as f64; m];
    let mut gx = conv.apply(&x);
    let mut fx = objective(&x, &gx, &v);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut t = 1.0f64;
    let mut z = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut scratch = Vec::with_capacity(m);
    let mut trace = vec![fx];
    let mut current_gap = gap(&x, &gx, &v);
    let mut iterations = 0;
    while iterations < max_iter && current_gap > tol {
        iterations += 1;
        for i in 0..m {
            trial[i] = y[i] - step * (gy[i] + v[i]);
        }
        project_simplex(&trial, &mut z, &mut scratch);
        let gz = conv.apply(&z);
        let fz = objective(&z, &gz, &v);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        // restart the momentum when it points uphill
        let uphill = compensated_sum((0..m).map(|i| (y[i] - z[i]) * (z[i] - x[i]))) > 0.0;
        if fz <= fx && uphill {
            y.copy_from_slice(&z);
            gy.copy_from_slice(&gz);
            std::mem::swap(&mut x, &mut z);
            gx = gz;
            fx = fz;
            t = 1.0;
        } else if fz <= fx {
            // x_{k+1} = z: y = z + b (z - x_k)
            for i in 0..m {
                y[i] = z[i] + b * (z[i] - x[i]);
                gy[i] = gz[i] + b * (gz[i] - gx[i]);
            }
            std::mem::swap(&mut x, &mut z);
            gx = gz;
            fx = fz;
        } else {
            // x_{k+1} = x_k: y = x + a (z - x)
            for i in 0..m {
                y[i] = x[i] + a * (z[i] - x[i]);
                gy[i] = gx[i] + a * (gz[i] - gx[i]);
            }
        }
        if !(fz <= fx && uphill) {
            t = t_next;
        }
        trace.push(fx);
        if iterations % 10 == 0 {
            current_gap = gap(&x, &gx, &v);
        }
        if iterations % 200 == 0 {
            // refresh the recursively combined convolutions
            gy = conv.apply(&y);
        }
    }
    current_gap = gap(&x, &gx, &v);
    let result = assemble(kernel, grid, x, gx, &v, iterations, current_gap, trace)?;
    if current_gap > tol {
        return Err(Error::EquilibriumUnconverged(Box::new(result)));
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    kernel: &InteractionKernel,
    grid: &Grid,
    masses: Vec<f64>,
    h: Vec<f64>,
    v: &[f64],
    iterations: usize,
    gap: f64,
    objective_trace: Vec<f64>,
) -> Result<EquilibriumResult> {
    let vol = grid.cell_volume();
    let density = GriddedDensity::normalized(grid.clone(), masses.iter().map(|w| w / vol).collect())?;
    let masses = density.masses();
    let support = support_mask(density.values());
    let total: Vec<f64> = h.iter().zip(v).map(|(a, b)| a + b).collect();
    let residuals = residuals_from(&total, &support);
    let self_energy = compensated_sum(masses.iter().zip(&h).map(|(a, b)| a * b));
    let potential_mean = compensated_sum(masses.iter().zip(v).map(|(a, b)| a * b));
    let lower: Vec<f64> = (0..grid.dim()).map(|a| grid.coordinate(a, 0)).collect();
    let interpolant = TabulatedPotential::new(lower, grid.spacing().to_vec(), grid.shape().to_vec(), h.clone())?;
    Ok(EquilibriumResult {
        kernel: *kernel,
        density,
        support,
        robin_constant: residuals.robin_constant,
        energy: 0.5 * self_energy + potential_mean,
        self_energy,
        potential_mean,
        residuals,
        potential: h,
        iterations,
        gap,
        objective_trace,
        interpolant,
    })
}

impl EquilibriumResult {
    pub fn grid(&self) -> &Grid {
        self.density.grid()
    }

    /// Largest distance from the origin of a support cell centre, plus half a cell diagonal.
    pub fn support_radius(&self) -> f64 {
        let g = self.grid();
        let half = 0.5 * g.spacing().iter().map(|h| h * h).sum::<f64>().sqrt();
        (0..g.len())
            .filter(|&i| self.support[i])
            .map(|i| g.center(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            + half
    }

    /// Support extent along the first axis `[min, max]` of cell edges.
    pub fn support_interval(&self) -> (f64, f64) {
        let g = self.grid();
        let h = g.spacing()[0];
        let xs: Vec<f64> = (0..g.len()).filter(|&i| self.support[i]).map(|i| g.center(i)[0]).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min) - 0.5 * h;
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.5 * h;
        (lo, hi)
    }

    fn inside_centres(&self, x: &[f64]) -> bool {
        let g = self.grid();
        (0..g.dim()).all(|a| x[a] >= g.coordinate(a, 0) && x[a] <= g.coordinate(a, g.shape()[a] - 1))
    }
}

impl MeanFieldReference for EquilibriumResult {
    fn dim(&self) -> usize {
        self.grid().dim()
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        if self.inside_centres(x) {
            Ok(self.interpolant.value_and_gradient(x).0)
        } else {
            background_potential(&self.density, &self.kernel, x)
        }
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.density.value_at(x)
    }

    fn self_energy(&self) -> f64 {
        self.self_energy
    }

    fn potential_mean(&self) -> f64 {
        self.potential_mean
    }

    fn robin_constant(&self) -> f64 {
        self.robin_constant
    }

    fn first_moment(&self) -> Vec<f64> {
        let g = self.grid();
        let mut out = vec![0.0; g.dim()];
        for (i, m) in self.density.masses().iter().enumerate() {
            for (o, c) in out.iter_mut().zip(g.center(i)) {
                *o += m * c;
            }
        }
        out
    }

    fn fourier(&self, k: &[f64]) -> Result<Complex<f64>> {
        let g = self.grid();
        let shape: f64 = k
            .iter()
            .zip(g.spacing())
            .map(|(kk, h)| {
                let u = 0.5 * kk * h;
                if u.abs() < 1e-8 { 1.0 } else { u.sin() / u }
            })
            .product();
        let mut acc = Complex::new(0.0, 0.0);
        let mut c = vec![0.0; g.dim()];
        for (i, m) in self.density.masses().iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            g.center_into(i, &mut c);
            let phase: f64 = k.iter().zip(&c).map(|(a, b)| a * b).sum();
            acc += Complex::from_polar(*m, -phase);
        }
        Ok(acc * shape)
    }

    fn ball_mass(&self, center: &[f64], r: f64) -> f64 {
        gridded_ball_mass(&self.density, center, r)
    }
}

/// Mass of `B(center, r)` under a piecewise-constant density; boundary cells are subsampled.
pub fn gridded_ball_mass(density: &GriddedDensity, center: &[f64], r: f64) -> f64 {
    let g = density.grid();
    let d = g.dim();
    let half_diag = 0.5 * g.spacing().iter().map(|h| h * h).sum::<f64>().sqrt();
    let sub = 8usize;
    let total_sub = sub.pow(d as u32);
    let mut c = vec![0.0; d];
    let mut mass = 0.0;
    let vol = g.cell_volume();
    for (i, &rho) in density.values().iter().enumerate() {
        if rho == 0.0 {
            continue;
        }
        g.center_into(i, &mut c);
        let dist = c.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist + half_diag <= r {
            mass += rho * vol;
        } else if dist - half_diag < r {
            let mut inside = 0usize;
            for s in 0..total_sub {
                let mut rest = s;
                let mut d2 = 0.0;
                for a in 0..d {
                    let k = rest % sub;
                    rest /= sub;
                    let y = c[a] + ((k as f64 + 0.5) / sub as f64 - 0.5) * g.spacing()[a];
                    d2 += (y - center[a]).powi(2);
                }
                if d2 <= r * r {
                    inside += 1;
                }
            }
            mass += rho * vol * inside as f64 / total_sub as f64;
        }
    }
    mass
}

/// `Laplacian V / c_d` on the grid cells (optionally restricted to a mask), not normalized.
pub fn coulomb_density_formula(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    grid: &Grid,
    region: Option<&[bool]>,
) -> Result<GriddedDensity> {
    if !matches!(kernel.family(), KernelFamily::Log2 | KernelFamily::Coulomb) {
        return Err(Error::Unsupported("the Laplacian formula needs a log2 or Coulomb kernel".into()));
    }
    let c = kernel.laplace_constant()?;
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let keep = region.is_none_or(|r| r[i]);
        values.push(if keep { (potential.laplacian(&grid.center(i))? / c).max(0.0) } else { 0.0 });
    }
    GriddedDensity::unnormalized(grid.clone(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalResult {
    pub density: GriddedDensity,
    pub iterations: usize,
    /// Final sup-norm change of the density.
    pub update: f64,
    /// Damping used at each iteration.
    pub damping_trace: Vec<f64>,
    /// `h^mu` at the cell centres.
    pub potential: Vec<f64>,
}

/// Minimizer of `beta I_V(mu) + int mu log mu` by the damped fixed point
/// `mu <- (1 - tau) mu + tau exp(-beta (h^mu + V)) / Z`.
pub fn thermal_equilibrium(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    beta: f64,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<ThermalResult> {
    if !(beta > 0.0) {
        return usage("beta must be positive");
    }
    let conv = Convolver::new(kernel, grid)?;
    let m = grid.len();
    let vol = grid.cell_volume();
    let v: Vec<f64> = (0..m).map(|i| potential.value(&grid.center(i))).collect();
    let gibbs = |h: &[f64]| -> Vec<f64> {
        let e: Vec<f64> = h.iter().zip(&v).map(|(a, b)| -beta * (a + b)).collect();
        let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|x| (x - top).exp()).collect();
        let z = compensated_sum(w.iter().copied()) * vol;
        w.into_iter().map(|x| x / z).collect()
    };
    let mut mu = gibbs(&vec![0.0; m]);
    let mut tau: f64 = 0.5;
    let mut last = f64::INFINITY;
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let masses: Vec<f64> = mu.iter().map(|x| x * vol).collect();
        let h = conv.apply(&masses);
        let target = gibbs(&h);
        let change = mu.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < tol {
            let density = GriddedDensity::normalized(grid.clone(), mu)?;
            return Ok(ThermalResult { density, iterations: it, update: change, damping_trace: trace, potential: h });
        }
        if change > last {
            tau *= 0.5;
        } else {
            tau = (tau * 1.05).min(1.0);
        }
        if tau < 1e-8 {
            break;
        }
        last = change;
        trace.push(tau);
        for (a, b) in mu.iter_mut().zip(&target) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: last,
        context: format!("thermal fixed point at beta = {beta}, damping trace ends at {tau:.3e}"),
    })
}
