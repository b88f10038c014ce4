//! Rectangular cell grids, gridded densities and padded-FFT convolution with a kernel.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{usage, Error, Result};
use crate::kernel::InteractionKernel;
use crate::special::gauss_legendre_on;

/// Uniform cell-centred grid on a box. Cell `k` on axis `a` has centre
/// `mid[a] + (k + 1/2 - n/2) h[a]`, so symmetric boxes give mirror-exact coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    mid: Vec<f64>,
    spacing: Vec<f64>,
    shape: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || shape.len() != d {
            return usage("grid: lower, upper and shape must share a nonzero dimension");
        }
        if shape.contains(&0) || lower.iter().zip(&upper).any(|(a, b)| !(b > a)) {
            return usage("grid: need positive cell counts and upper > lower");
        }
        let mid = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
        let spacing = lower.iter().zip(&upper).zip(&shape).map(|((a, b), &n)| (b - a) / n as f64).collect();
        Ok(Self { mid, spacing, shape })
    }

    /// Box `[-half_width, half_width]^d` with `n` cells per axis.
    pub fn symmetric(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn lower(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.mid[a] - 0.5 * self.shape[a] as f64 * self.spacing[a]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.mid[a] + 0.5 * self.shape[a] as f64 * self.spacing[a]).collect()
    }

    #[inline]
    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        self.mid[axis] + (k as f64 + 0.5 - 0.5 * self.shape[axis] as f64) * self.spacing[axis]
    }

    /// Multi-index of a flat (row-major) cell index.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        self.center_into(flat, &mut c);
        c
    }

    pub fn center_into(&self, mut flat: usize, out: &mut [f64]) {
        for a in (0..self.dim()).rev() {
            let k = flat % self.shape[a];
            flat /= self.shape[a];
            out[a] = self.coordinate(a, k);
        }
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let lower = self.lower();
        let mut flat = 0;
        for a in 0..self.dim() {
            let u = (x[a] - lower[a]) / self.spacing[a];
            if !(u >= 0.0) || u >= self.shape[a] as f64 {
                return None;
            }
            flat = flat * self.shape[a] + u as usize;
        }
        Some(flat)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.shape == other.shape
            && self.mid.iter().zip(&other.mid).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs())
    }

    /// Map cells through a 90-degree rotation in the first two axes (square grids only).
    pub fn rotate_quarter(&self, values: &[f64]) -> Option<Vec<f64>> {
        if self.dim() != 2 || self.shape[0] != self.shape[1] {
            return None;
        }
        let n = self.shape[0];
        let mut out = vec![0.0; values.len()];
        for i in 0..n {
            for j in 0..n {
                out[j * n + (n - 1 - i)] = values[i * n + j];
            }
        }
        Some(out)
    }
}

/// Average of `g` over a cell of the given spacing centred at the origin.
pub fn kernel_cell_mean(kernel: &InteractionKernel, spacing: &[f64]) -> f64 {
    kernel_cell_mean_from(kernel, spacing, &vec![0.0; spacing.len()])
}

/// Average of `g(x - y)` over `y` in a cell centred at the origin, for `x = offset`
/// inside the cell.
///
/// The cell is split into pyramids with apex at `x`; the radial integral is done
/// in closed form and the smooth face integrals by Gauss-Legendre.
pub fn kernel_cell_mean_from(kernel: &InteractionKernel, spacing: &[f64], offset: &[f64]) -> f64 {
    let d = spacing.len();
    let lo: Vec<f64> = (0..d).map(|j| -0.5 * spacing[j] - offset[j]).collect();
    let hi: Vec<f64> = (0..d).map(|j| 0.5 * spacing[j] - offset[j]).collect();
    let volume: f64 = spacing.iter().product();
    let df = d as f64;
    let radial = |p: f64| -> f64 {
        match kernel.exponent() {
            None => 1.0 / (df * df) - p.ln() / df,
            Some(s) => p.powf(-s) / (df - s),
        }
    };
    let order = if d <= 2 { 48 } else { 32 };
    let mut total = 0.0;
    for k in 0..d {
        let rules: Vec<Vec<(f64, f64)>> =
            (0..d).filter(|&j| j != k).map(|j| gauss_legendre_on(order, lo[j], hi[j])).collect();
        let count: usize = rules.iter().map(|r| r.len()).product();
        for dist in [hi[k], -lo[k]] {
            if dist <= 0.0 {
                continue;
            }
            let mut face = 0.0;
            for m in 0..count.max(1) {
                let mut rest = m;
                let mut p2 = dist * dist;
                let mut w = 1.0;
                for r in &rules {
                    let (y, wy) = r[rest % r.len()];
                    rest /= r.len();
                    p2 += y * y;
                    w *= wy;
                }
                face += w * radial(p2.sqrt());
            }
            total += dist * face;
        }
    }
    total / volume
}

/// Probability density sampled at cell centres (values per unit volume).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GriddedDensity {
    /// Nonnegative values rescaled to unit mass.
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::unnormalized(grid, values)?;
        let mass = d.mass();
        if !(mass > 0.0) {
            return usage("density has zero mass");
        }
        d.values.iter_mut().for_each(|v| *v /= mass);
        Ok(d)
    }

    /// Nonnegative values kept as given.
    pub fn unnormalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return usage(format!("density has {} values for {} cells", values.len(), grid.len()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return usage("density values must be finite and nonnegative");
        }
        Ok(Self { grid, values })
    }

    /// Sample a density function at cell centres and normalise.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.center(i)).max(0.0)).collect();
        Self::normalized(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        crate::scalar::compensated_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    pub fn masses(&self) -> Vec<f64> {
        let v = self.grid.cell_volume();
        self.values.iter().map(|x| x * v).collect()
    }

    /// Piecewise-constant value at `x` (0 outside the box).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.locate(x).map_or(0.0, |i| self.values[i])
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let m = self.mass();
        if (m - 1.0).abs() > tol {
            return usage(format!("density mass {m} differs from 1 by more than {tol:e}"));
        }
        Ok(())
    }

    /// CSV: a `#` grid header line, a column header, then one row per cell in row-major order.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(";");
        let shape: Vec<String> = g.shape().iter().map(|n| n.to_string()).collect();
        s.push_str(&format!(
            "# grid dim={} shape={} lower={} upper={}\n",
            g.dim(),
            shape.join("x"),
            join(&g.lower()),
            join(&g.upper())
        ));
        let cols: Vec<String> = (0..g.dim()).map(|a| format!("x{a}")).collect();
        s.push_str(&format!("{},density\n", cols.join(",")));
        let mut c = vec![0.0; g.dim()];
        for (i, v) in self.values.iter().enumerate() {
            g.center_into(i, &mut c);
            for x in &c {
                s.push_str(&format!("{x:.16e},"));
            }
            s.push_str(&format!("{v:.16e}\n"));
        }
        s
    }
}

/// Scalar potential on a grid together with its gradient components.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub gradient: Vec<Vec<f64>>,
}

impl GriddedField {
    /// Builds the gradient by centred differences (one-sided at the box edge).
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        let d = grid.dim();
        let mut gradient = vec![vec![0.0; values.len()]; d];
        for (flat, _) in values.iter().enumerate() {
            let idx = grid.unflatten(flat);
            for a in 0..d {
                let n = grid.shape()[a];
                let mut lo = idx.clone();
                let mut hi = idx.clone();
                let (mut span, k) = (2.0, idx[a]);
                if k == 0 {
                    span = 1.0;
                } else {
                    lo[a] = k - 1;
                }
                if k + 1 == n {
                    span -= 1.0;
                } else {
                    hi[a] = k + 1;
                }
                if span > 0.0 {
                    gradient[a][flat] = (values[grid.flatten(&hi)] - values[grid.flatten(&lo)]) / (span * grid.spacing()[a]);
                }
            }
        }
        Self { grid, values, gradient }
    }
}

pub(crate) fn fft_nd(data: &mut [Complex<f64>], shape: &[usize], plans: &[Arc<dyn Fft<f64>>]) {
    let total: usize = shape.iter().product();
    let mut stride = 1;
    let mut line = Vec::new();
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        let plan = &plans[axis];
        if stride == 1 {
            plan.process(data);
        } else {
            line.resize(n, Complex::new(0.0, 0.0));
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, l) in line.iter_mut().enumerate() {
                        *l = data[base + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, l) in line.iter().enumerate() {
                        data[base + k * stride] = *l;
                    }
                }
            }
        }
        stride *= n;
    }
}

/// Aperiodic discrete convolution `h_i = sum_j G(x_i - x_j) m_j` on a grid, with
/// `G` the kernel at cell-centre offsets and its cell mean on the diagonal.
pub struct Convolver {
    grid: Grid,
    padded: Vec<usize>,
    kernel_hat: Vec<Complex<f64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    self_value: f64,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("grid", &self.grid).field("padded", &self.padded).finish()
    }
}

impl Convolver {
    pub fn new(kernel: &InteractionKernel, grid: &Grid) -> Result<Self> {
        if kernel.dim() != grid.dim() {
            return usage(format!("kernel dimension {} differs from grid dimension {}", kernel.dim(), grid.dim()));
        }
        if !kernel.is_locally_integrable() {
            return Err(Error::Unsupported("kernel is not integrable over a cell".into()));
        }
        let padded: Vec<usize> = grid.shape().iter().map(|n| 2 * n).collect();
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = padded.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = padded.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let self_value = kernel_cell_mean(kernel, grid.spacing());
        let total: usize = padded.iter().product();
        let d = grid.dim();
        let mut buf = vec![Complex::new(0.0, 0.0); total];
        let mut idx = vec![0usize; d];
        for (flat, slot) in buf.iter_mut().enumerate() {
            let mut rest = flat;
            for a in (0..d).rev() {
                idx[a] = rest % padded[a];
                rest /= padded[a];
            }
            let mut r2 = 0.0;
            let mut valid = true;
            for a in 0..d {
                let n = grid.shape()[a] as i64;
                let m = idx[a] as i64;
                let off = if m < n { m } else { m - 2 * n };
                if off == -n {
                    valid = false;
                }
                let x = off as f64 * grid.spacing()[a];
                r2 += x * x;
            }
            if !valid {
                continue;
            }
            let v = if r2 == 0.0 { self_value } else { kernel.value_r2(r2)? };
            *slot = Complex::new(v, 0.0);
        }
        fft_nd(&mut buf, &padded, &forward);
        Ok(Self { grid: grid.clone(), padded, kernel_hat: buf, forward, inverse, self_value })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Kernel value used for the diagonal (mean of `g` over one cell).
    pub fn self_value(&self) -> f64 {
        self.self_value
    }

    fn embed(&self, masses: &[f64]) -> Vec<Complex<f64>> {
        let total: usize = self.padded.iter().product();
        let mut buf = vec![Complex::new(0.0, 0.0); total];
        for (flat, &m) in masses.iter().enumerate() {
            let idx = self.grid.unflatten(flat);
            let p = idx.iter().zip(&self.padded).fold(0, |acc, (&i, &n)| acc * n + i);
            buf[p] = Complex::new(m, 0.0);
        }
        buf
    }

    /// Potential at every cell centre generated by the cell masses.
    pub fn apply(&self, masses: &[f64]) -> Vec<f64> {
        assert_eq!(masses.len(), self.grid.len());
        let mut buf = self.embed(masses);
        fft_nd(&mut buf, &self.padded, &self.forward);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        fft_nd(&mut buf, &self.padded, &self.inverse);
        let scale = 1.0 / buf.len() as f64;
        (0..self.grid.len())
            .map(|flat| {
                let idx = self.grid.unflatten(flat);
                let p = idx.iter().zip(&self.padded).fold(0, |acc, (&i, &n)| acc * n + i);
                buf[p].re * scale
            })
            .collect()
    }

    /// `sum_ij m_i G_ij m_j` evaluated in Fourier space.
    pub fn spectral_energy(&self, masses: &[f64]) -> f64 {
        let mut buf = self.embed(masses);
        fft_nd(&mut buf, &self.padded, &self.forward);
        let sum: f64 = buf.iter().zip(&self.kernel_hat).map(|(b, k)| k.re * b.norm_sqr()).sum();
        sum / buf.len() as f64
    }

    /// Most negative kernel Fourier mode relative to the largest one (0 if none).
    pub fn negative_mode_fraction(&self) -> f64 {
        let max = self.kernel_hat.iter().map(|k| k.re).fold(f64::MIN, f64::max);
        let min = self.kernel_hat.iter().skip(1).map(|k| k.re).fold(f64::MAX, f64::min);
        if min >= 0.0 { 0.0 } else { -min / max }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_grid_coordinates_are_mirror_exact() {
        let g = Grid::symmetric(1, 1.7, 37).unwrap();
        for k in 0..37 {
            assert_eq!(g.coordinate(0, k), -g.coordinate(0, 36 - k));
        }
    }

    #[test]
    fn cell_mean_of_log_on_interval_and_square() {
        let h = 0.3;
        let m1 = kernel_cell_mean(&InteractionKernel::log1(), &[h]);
        assert_relative_eq!(m1, 1.0 - (h / 2.0f64).ln(), max_relative = 1e-14);
        // unit square: mean of log(x^2 + y^2) over [0,1]^2 is ln 2 - 3 + pi/2
        let a = h / 2.0;
        let expected = -a.ln() - 0.5 * (2f64.ln() - 3.0 + std::f64::consts::FRAC_PI_2);
        let m2 = kernel_cell_mean(&InteractionKernel::log2(), &[h, h]);
        assert_relative_eq!(m2, expected, max_relative = 1e-12);
    }

    #[test]
    fn off_centre_cell_mean_matches_subdivision() {
        // [0,1]^2 seen from its corner equals the centred mean of a cell twice as large
        let k = InteractionKernel::log2();
        let corner = kernel_cell_mean_from(&k, &[1.0, 1.0], &[-0.5, -0.5]);
        let centred = kernel_cell_mean(&k, &[2.0, 2.0]);
        assert_relative_eq!(corner, centred, max_relative = 1e-13);
        let r = InteractionKernel::riesz(1.0, 2).unwrap();
        let a = kernel_cell_mean_from(&r, &[0.4, 0.4], &[0.1, -0.05]);
        let mut brute = 0.0;
        let n = 2000;
        for i in 0..n {
            for j in 0..n {
                let y = [-0.2 + 0.4 * (i as f64 + 0.5) / n as f64, -0.2 + 0.4 * (j as f64 + 0.5) / n as f64];
                let d2 = (y[0] - 0.1).powi(2) + (y[1] + 0.05).powi(2);
                brute += d2.powf(-0.5);
            }
        }
        assert_relative_eq!(a, brute / (n * n) as f64, max_relative = 2e-3);
    }

    #[test]
    fn cell_mean_of_coulomb_cube() {
        // brute-force midpoint over sub-cells away from the singular centre, analytic ball core
        let m = kernel_cell_mean(&InteractionKernel::coulomb(3).unwrap(), &[1.0, 1.0, 1.0]);
        // mean of 1/|x| over the unit cube centred at 0
        assert_relative_eq!(m, 2.380_077_363_979_7, max_relative = 1e-9);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let grid = Grid::new(vec![-1.0, -0.5], vec![1.0, 0.7], vec![9, 7]).unwrap();
        let k = InteractionKernel::log2();
        let conv = Convolver::new(&k, &grid).unwrap();
        let masses: Vec<f64> = (0..grid.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let h = conv.apply(&masses);
        for i in 0..grid.len() {
            let ci = grid.center(i);
            let mut direct = 0.0;
            for (j, m) in masses.iter().enumerate() {
                let cj = grid.center(j);
                let r2 = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2);
                direct += m * if i == j { conv.self_value() } else { k.value_r2(r2).unwrap() };
            }
            assert_relative_eq!(h[i], direct, max_relative = 1e-11, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_of_square_grid() {
        let g = Grid::symmetric(2, 1.0, 3).unwrap();
        let v: Vec<f64> = (0..9).map(|x| x as f64).collect();
        let r = g.rotate_quarter(&v).unwrap();
        let r4 = g.rotate_quarter(&g.rotate_quarter(&g.rotate_quarter(&r).unwrap()).unwrap()).unwrap();
        assert_eq!(r4, v);
    }
}
