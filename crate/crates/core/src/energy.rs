//! The N-point energy, its forces, the next-order splitting around a mean-field
//! reference, the Coulomb metric between densities and the truncated electric energy.

use rayon::prelude::*;
use rustfft::num_complex::Complex;

use crate::config::Configuration;
use crate::error::{usage, Error, Result};
use crate::grid::{kernel_cell_mean_from, Convolver, GriddedDensity};
use crate::kernel::{InteractionKernel, KernelFamily};
use crate::lattice::{PeriodicGreen, Torus};
use crate::potential::ExternalPotential;
use crate::reference::MeanFieldReference;
use crate::scalar::{compensated_sum, CompensatedSum, Scalar};

/// Below this many points the pair loops stay on one thread.
const PARALLEL_THRESHOLD: usize = 96;

fn check_dims<T: Scalar>(config: &Configuration<T>, kernel: &InteractionKernel) -> Result<()> {
    if config.dim() != kernel.dim() {
        return usage(format!("configuration dimension {} differs from kernel dimension {}", config.dim(), kernel.dim()));
    }
    Ok(())
}

fn pair_row<T: Scalar>(pos: &[T], d: usize, kernel: &InteractionKernel, i: usize) -> Result<T> {
    let n = pos.len() / d;
    let xi = &pos[i * d..(i + 1) * d];
    let mut acc = CompensatedSum::new();
    for j in (i + 1)..n {
        let xj = &pos[j * d..(j + 1) * d];
        let mut r2 = T::zero();
        for a in 0..d {
            let t = xi[a] - xj[a];
            r2 = r2 + t * t;
        }
        acc.add(kernel.value_r2(r2).map_err(|_| coincident(i, j))?);
    }
    Ok(acc.value())
}

fn coincident(i: usize, j: usize) -> Error {
    Error::Domain(format!("points {i} and {j} coincide"))
}

/// `(1/2) sum_{i != j} g(x_i - x_j)`.
pub fn pair_energy<T: Scalar>(config: &Configuration<T>, kernel: &InteractionKernel) -> Result<T> {
    check_dims(config, kernel)?;
    let (pos, d, n) = (config.positions(), config.dim(), config.len());
    let rows: Vec<T> = if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(|i| pair_row(pos, d, kernel, i)).collect::<Result<_>>()?
    } else {
        (0..n).map(|i| pair_row(pos, d, kernel, i)).collect::<Result<_>>()?
    };
    Ok(compensated_sum(rows))
}

/// `N sum_i V(x_i)`.
pub fn confinement_energy<T: Scalar>(config: &Configuration<T>, potential: &ExternalPotential) -> T {
    let n = T::of(config.len() as f64);
    n * compensated_sum(config.points().map(|x| potential.value(x)))
}

/// `H_N = (1/2) sum_{i != j} g(x_i - x_j) + N sum_i V(x_i)`.
pub fn hamiltonian<T: Scalar>(
    config: &Configuration<T>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
) -> Result<T> {
    Ok(pair_energy(config, kernel)? + confinement_energy(config, potential))
}

fn force_row<T: Scalar>(
    pos: &[T],
    d: usize,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    i: usize,
    out: &mut [T],
) -> Result<()> {
    let n = pos.len() / d;
    let inv_n = T::of(1.0 / n as f64);
    let xi = &pos[i * d..(i + 1) * d];
    potential.gradient_into(xi, out);
    let mut acc = vec![T::zero(); d];
    let mut diff = vec![T::zero(); d];
    for j in 0..n {
        if j == i {
            continue;
        }
        let xj = &pos[j * d..(j + 1) * d];
        let mut r2 = T::zero();
        for a in 0..d {
            diff[a] = xi[a] - xj[a];
            r2 = r2 + diff[a] * diff[a];
        }
        let f = kernel.gradient_factor_r2(r2).map_err(|_| coincident(i, j))?;
        for a in 0..d {
            acc[a] = acc[a] + f * diff[a];
        }
    }
    for a in 0..d {
        out[a] = -(out[a] + inv_n * acc[a]);
    }
    Ok(())
}

/// `-(1/N) grad H_N` written into `out` (row-major `N x d`) from raw positions.
pub fn mean_field_forces_into<T: Scalar>(
    dim: usize,
    positions: &[T],
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    out: &mut [T],
) -> Result<()> {
    let n = positions.len() / dim;
    if n >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(dim)
            .enumerate()
            .try_for_each(|(i, row)| force_row(positions, dim, kernel, potential, i, row))
    } else {
        out.chunks_mut(dim)
            .enumerate()
            .try_for_each(|(i, row)| force_row(positions, dim, kernel, potential, i, row))
    }
}

/// Rows `-(1/N) grad_{x_i} H_N`.
pub fn mean_field_forces<T: Scalar>(
    config: &Configuration<T>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
) -> Result<Vec<T>> {
    check_dims(config, kernel)?;
    let mut out = vec![T::zero(); config.positions().len()];
    mean_field_forces_into(config.dim(), config.positions(), kernel, potential, &mut out)?;
    Ok(out)
}

/// `H_N` after moving point `i` to `new_position`, minus `H_N` before, in `O(N)`.
pub fn delta_energy<T: Scalar>(
    config: &Configuration<T>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    i: usize,
    new_position: &[T],
) -> Result<T> {
    let d = config.dim();
    if new_position.len() != d || i >= config.len() {
        return usage("delta_energy: bad index or position dimension");
    }
    let old = config.point(i);
    let mut acc = CompensatedSum::new();
    for (j, xj) in config.points().enumerate() {
        if j == i {
            continue;
        }
        let mut r_new = T::zero();
        let mut r_old = T::zero();
        for a in 0..d {
            let t = new_position[a] - xj[a];
            r_new = r_new + t * t;
            let u = old[a] - xj[a];
            r_old = r_old + u * u;
        }
        acc.add(kernel.value_r2(r_new).map_err(|_| coincident(i, j))?);
        acc.add(-kernel.value_r2(r_old)?);
    }
    let n = T::of(config.len() as f64);
    acc.add(n * (potential.value(new_position) - potential.value(old)));
    Ok(acc.value())
}

/// `h^mu(x) = int g(x - y) dmu(y)` for a gridded density: cell-midpoint quadrature with the
/// cell containing `x` integrated exactly.
pub fn background_potential(density: &GriddedDensity, kernel: &InteractionKernel, x: &[f64]) -> Result<f64> {
    let grid = density.grid();
    if kernel.dim() != grid.dim() || x.len() != grid.dim() {
        return usage("background_potential: dimension mismatch");
    }
    let own = grid.locate(x);
    let vol = grid.cell_volume();
    let mut c = vec![0.0; grid.dim()];
    let mut acc = CompensatedSum::new();
    for (idx, &rho) in density.values().iter().enumerate() {
        if rho == 0.0 {
            continue;
        }
        grid.center_into(idx, &mut c);
        if Some(idx) == own {
            let offset: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            acc.add(rho * vol * kernel_cell_mean_from(kernel, grid.spacing(), &offset));
        } else {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            acc.add(rho * vol * kernel.value_r2(r2)?);
        }
    }
    Ok(acc.value())
}

/// Terms of `H_N = N^2 I_V(mu_V) + cross + F_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEnergy {
    pub leading: f64,
    pub cross: f64,
    pub next_order: f64,
}

impl SplitEnergy {
    pub fn total(&self) -> f64 {
        self.leading + self.cross + self.next_order
    }
}

/// Split the energy of `config` around the reference measure.
pub fn split_energy(
    config: &Configuration<f64>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    reference: &dyn MeanFieldReference,
) -> Result<SplitEnergy> {
    check_dims(config, kernel)?;
    if reference.dim() != config.dim() {
        return usage("reference and configuration dimensions differ");
    }
    let n = config.len() as f64;
    let pairs = pair_energy(config, kernel)?;
    let h: Vec<f64> = config.points().map(|x| reference.potential(x)).collect::<Result<_>>()?;
    let sum_h = compensated_sum(h.iter().copied());
    let sum_v = compensated_sum(config.points().map(|x| potential.value(x)));
    let e = reference.self_energy();
    let vmean = reference.potential_mean();
    let leading = n * n * reference.energy();
    let cross = compensated_sum([n * sum_h, n * sum_v, -n * n * e, -n * n * vmean]);
    let next_order = compensated_sum([pairs, -n * sum_h, 0.5 * n * n * e]);
    Ok(SplitEnergy { leading, cross, next_order })
}

/// `d_g(mu, nu) = sqrt(int int g d(mu - nu) d(mu - nu))` on a common grid.
pub fn coulomb_metric(kernel: &InteractionKernel, mu: &GriddedDensity, nu: &GriddedDensity) -> Result<f64> {
    if !mu.grid().same_as(nu.grid()) {
        return usage("coulomb_metric: densities live on different grids");
    }
    mu.check_normalized(1e-10)?;
    nu.check_normalized(1e-10)?;
    let conv = Convolver::new(kernel, mu.grid())?;
    coulomb_metric_with(&conv, mu, nu)
}

/// As [`coulomb_metric`] with a prepared convolver (reused across many calls).
pub fn coulomb_metric_with(conv: &Convolver, mu: &GriddedDensity, nu: &GriddedDensity) -> Result<f64> {
    if !mu.grid().same_as(conv.grid()) || !nu.grid().same_as(conv.grid()) {
        return usage("coulomb_metric: densities live on different grids");
    }
    let vol = conv.grid().cell_volume();
    let sigma: Vec<f64> = mu.values().iter().zip(nu.values()).map(|(a, b)| (a - b) * vol).collect();
    Ok(conv.spectral_energy(&sigma).max(0.0).sqrt())
}

/// Default truncation radius `0.3 N^{-1/d}`.
pub fn default_eta(n: usize, dim: usize) -> f64 {
    0.3 * (n as f64).powf(-1.0 / dim as f64)
}

/// Periodic box used for the spectral solve: side `side`, resolved down to `spacing`
/// (modes with `|k| <= pi / spacing`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBox {
    pub side: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedEnergy {
    /// `(1/(2 c_d)) (int |grad H_{N,eta}|^2 - N c_d g(eta))`.
    pub value: f64,
    pub eta: f64,
    /// Some pair is closer than `2 eta`; the shells overlap and the value is biased.
    pub overlapping: bool,
    pub modes: usize,
}

fn shell_transform(dim: usize, u: f64) -> f64 {
    match dim {
        2 => libm::j0(u),
        3 => {
            if u < 1e-6 { 1.0 - u * u / 6.0 } else { u.sin() / u }
        }
        _ => unreachable!(),
    }
}

/// Electric energy of the points smeared on spheres of radius `eta` against `N mu`.
///
/// `-Laplacian H = c_d (sum_i delta^{(eta)}_{x_i} - N mu)` is solved by Fourier series on a
/// periodic box with the exact transforms of the shells and of `mu`. The self-interaction of
/// each shell is summed in closed form through the torus Green function, and the dipole term
/// converts the periodic energy back to the free-space one.
pub fn truncated_electric_energy(
    config: &Configuration<f64>,
    kernel: &InteractionKernel,
    reference: &dyn MeanFieldReference,
    eta: f64,
    spectral: &SpectralBox,
) -> Result<TruncatedEnergy> {
    check_dims(config, kernel)?;
    let d = config.dim();
    if !matches!(kernel.family(), KernelFamily::Log2 | KernelFamily::Coulomb) || d > 3 {
        return Err(Error::Unsupported("truncated electric energy needs log2 or Coulomb in d <= 3".into()));
    }
    if !(eta > 0.0) {
        return usage("eta must be positive");
    }
    if eta < 2.0 * spectral.spacing {
        return usage(format!("grid too coarse: eta = {eta} is below twice the spacing {}", spectral.spacing));
    }
    let c = kernel.laplace_constant()?;
    let n = config.len();
    let nf = n as f64;
    let side = spectral.side;
    let centre = reference.first_moment();
    for x in config.points() {
        if x.iter().zip(&centre).any(|(a, b)| (a - b).abs() > 0.45 * side) {
            return usage("a point lies outside the spectral box; enlarge the side");
        }
    }
    let kmax = std::f64::consts::PI / spectral.spacing;
    let dk = 2.0 * std::f64::consts::PI / side;
    let m = (kmax / dk).floor() as i64;
    let width = (2 * m + 1) as usize;
    let rel: Vec<Vec<f64>> = config.points().map(|x| x.iter().zip(&centre).map(|(a, b)| a - b).collect()).collect();
    // phase tables exp(-i dk m x_a) per point and axis
    let tables: Vec<Vec<Vec<Complex<f64>>>> = rel
        .iter()
        .map(|x| {
            x.iter()
                .map(|&xa| (-m..=m).map(|mm| Complex::from_polar(1.0, -dk * mm as f64 * xa)).collect())
                .collect()
        })
        .collect();
    let rows: Vec<(f64, usize)> = (0..width)
        .into_par_iter()
        .map(|i0| -> Result<(f64, usize)> {
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut idx = vec![0usize; d];
            idx[0] = i0;
            let inner = width.pow(d as u32 - 1);
            let mut k = vec![0.0; d];
            for rest in 0..inner {
                let mut r = rest;
                for a in (1..d).rev() {
                    idx[a] = r % width;
                    r /= width;
                }
                let mut k2 = 0.0;
                for a in 0..d {
                    k[a] = dk * (idx[a] as f64 - m as f64);
                    k2 += k[a] * k[a];
                }
                if k2 == 0.0 || k2 > kmax * kmax {
                    continue;
                }
                count += 1;
                let mut s = Complex::new(0.0, 0.0);
                for t in &tables {
                    let mut p = t[0][idx[0]];
                    for a in 1..d {
                        p *= t[a][idx[a]];
                    }
                    s += p;
                }
                let shell = shell_transform(d, k2.sqrt() * eta);
                let mu_hat = {
                    // transform of mu about its centre
                    let shift: f64 = k.iter().zip(&centre).map(|(a, b)| a * b).sum();
                    reference.fourier(&k)? * Complex::from_polar(1.0, shift)
                };
                let q = shell * shell * (s.norm_sqr() - nf) - 2.0 * nf * shell * (s * mu_hat.conj()).re
                    + nf * nf * mu_hat.norm_sqr();
                sum += q / k2;
            }
            Ok((sum, count))
        })
        .collect::<Result<_>>()?;
    let modes = rows.iter().map(|r| r.1).sum();
    let volume = side.powi(d as i32);
    let spectral_sum = c / volume * compensated_sum(rows.iter().map(|r| r.0));
    let torus = Torus::cube(d, side)?;
    let regular = PeriodicGreen::new(kernel, &torus, 1e-17)?.regular_part_at_zero();
    let mut dipole = vec![0.0; d];
    for x in &rel {
        for a in 0..d {
            dipole[a] += x[a];
        }
    }
    let p2: f64 = dipole.iter().map(|v| v * v).sum();
    let df = d as f64;
    let periodic_minus_self = spectral_sum + nf * (regular + c * eta * eta / (df * volume));
    let value = 0.5 * (periodic_minus_self + c / (df * volume) * p2);
    let overlapping = n > 1 && 2.0 * eta >= config.min_pair_distance();
    Ok(TruncatedEnergy { value, eta, overlapping, modes })
}
