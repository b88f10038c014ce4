use coulomb_core::energy::{default_eta, hamiltonian, split_energy, truncated_electric_energy, SpectralBox};
use coulomb_core::equilibrium::solve_equilibrium;
use coulomb_core::lattice::{
    epstein_zeta, minimize_zeta, torus_energy_extrapolated, torus_renormalized_energy, Lattice2D, Torus, TorusConfiguration,
    ZetaSearch,
};
use coulomb_core::{CircleLaw, Configuration, ExternalPotential, Grid, InteractionKernel, MeanFieldReference, Semicircle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const EL_TOL: f64 = 5e-3;
const SEMICIRCLE_SUP_TOL: f64 = 1e-2;
const SPLIT_REL_TOL: f64 = 1e-10;
const CROSS_PER_POINT_TOL: f64 = 5e-3;
const TRUNCATION_RATIO_MAX: f64 = 0.5;
const ZETA_TAU_TOL: f64 = 1e-3;
const EWALD_DIRECT_TOL: f64 = 1e-10;
const TORUS_GAP_DIGITS: f64 = 5e-4;

pub fn c02_semicircle() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha, half_width) in [(1.0, 1.5), (0.25, 3.0)] {
        let grid = Grid::symmetric(1, half_width, 1024).unwrap();
        let eq = solve_equilibrium(&InteractionKernel::log1(), &ExternalPotential::quadratic(alpha), &grid, 1e-9, 20000).unwrap();
        let sc = Semicircle::new(alpha).unwrap();
        let h = grid.spacing()[0];
        // compare cell averages: the discrete density is piecewise constant
        let sup = (0..grid.len())
            .map(|i| {
                let x = grid.center(i)[0];
                let exact = (sc.cdf(x + 0.5 * h) - sc.cdf(x - 0.5 * h)) / h;
                (eq.density.values()[i] - exact).abs()
            })
            .fold(0.0, f64::max);
        let (lo, hi) = eq.support_interval();
        let el = eq.residuals.on_support.max(eq.residuals.off_support);
        let edge_ok = (hi - sc.edge()).abs() <= 2.0 * h && (lo + sc.edge()).abs() <= 2.0 * h;
        pass &= el <= EL_TOL && sup < SEMICIRCLE_SUP_TOL && edge_ok;
        parts.push(format!("V = {alpha} x^2: support [{lo:.4}, {hi:.4}], EL {el:.2e}, sup error {sup:.2e}"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn disc_config(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Configuration<f64> {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let t = std::f64::consts::TAU * rng.random::<f64>();
            vec![r * t.cos(), r * t.sin()]
        })
        .collect();
    Configuration::from_points(&pts).unwrap()
}

pub fn c03_splitting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let log2 = InteractionKernel::log2();
    let log1 = InteractionKernel::log1();
    let v = ExternalPotential::quadratic(1.0);
    let circle = CircleLaw::new(1.0).unwrap();
    let semi = Semicircle::new(1.0).unwrap();
    let (mut worst_rel, mut worst_cross) = (0.0f64, 0.0f64);
    let mut count = 0;
    for k in 0..1000 {
        let n = rng.random_range(2..=120);
        // every other configuration spills outside the support
        let spread = if k % 2 == 0 { 1.0 } else { 1.8 };
        let (config, kernel, reference): (_, _, &dyn MeanFieldReference) = if k % 5 == 4 {
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![spread * semi.edge() * rng.random_range(-1.0..1.0)]).collect();
            (Configuration::from_points(&pts).unwrap(), &log1, &semi)
        } else {
            (disc_config(&mut rng, n, spread * circle.radius()), &log2, &circle)
        };
        let h = hamiltonian(&config, kernel, &v).unwrap();
        let s = split_energy(&config, kernel, &v, reference).unwrap();
        worst_rel = worst_rel.max((s.total() - h).abs() / h.abs().max(1.0));
        if spread == 1.0 {
            worst_cross = worst_cross.max(s.cross.abs() / n as f64);
        }
        count += 1;
    }
    Outcome::new(
        worst_rel <= SPLIT_REL_TOL && worst_cross < CROSS_PER_POINT_TOL,
        format!("{count} configurations: worst relative reconstruction {worst_rel:.2e}, worst |cross|/N inside the support {worst_cross:.2e}"),
    )
}

pub fn c04_truncation() -> Outcome {
    let n = 50;
    let circle = CircleLaw::new(1.0).unwrap();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    // points strictly inside the droplet, shifted off the symmetric position
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let r = 0.9 * circle.radius() * ((k as f64 + 0.5) / n as f64).sqrt();
            let t = golden * k as f64;
            vec![r * t.cos() + 0.01, r * t.sin()]
        })
        .collect();
    let config = Configuration::from_points(&pts).unwrap();
    let kernel = InteractionKernel::log2();
    let exact = split_energy(&config, &kernel, &ExternalPotential::quadratic(1.0), &circle).unwrap().next_order;
    let spectral = SpectralBox { side: 3.0, spacing: 0.0025 };
    let eta0 = default_eta(n, 2);
    let errors: Vec<f64> = (0..4)
        .map(|j| {
            let t = truncated_electric_energy(&config, &kernel, &circle, eta0 / 2f64.powi(j), &spectral).unwrap();
            (t.value - exact).abs()
        })
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = ratios.iter().all(|&r| r <= TRUNCATION_RATIO_MAX);
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.*e}", p)).collect::<Vec<_>>().join(", ");
    Outcome::new(pass, format!("errors [{}], ratios [{}]", fmt(&errors, 2), fmt(&ratios, 3)))
}

/// `sum_{p != 0} |p|^{-s}` over the disc of radius `r_max` plus the continuum tail.
fn direct_zeta(lattice: Lattice2D, s: f64, r_max: f64) -> f64 {
    let b = lattice.basis();
    let m = (r_max / b[3]).ceil() as i64 + 1;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for j in -m..=m {
        let y = j as f64 * b[3];
        let shift = j as f64 * b[1];
        let span = (r_max * r_max - y * y).max(0.0).sqrt();
        let lo = ((-span - shift) / b[0]).floor() as i64 - 1;
        let hi = ((span - shift) / b[0]).ceil() as i64 + 1;
        for i in lo..=hi {
            let x = i as f64 * b[0] + shift;
            let r2 = x * x + y * y;
            if r2 == 0.0 || r2 > r_max * r_max {
                continue;
            }
            let term = r2.powf(-0.5 * s) - comp;
            let next = sum + term;
            comp = (next - sum) - term;
            sum = next;
        }
    }
    sum + 2.0 * std::f64::consts::PI * r_max.powf(2.0 - s) / (s - 2.0)
}

pub fn c09_zeta() -> Outcome {
    let tri = Lattice2D::triangular();
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [0.5, 1.0, 3.0] {
        let m = minimize_zeta(s, &ZetaSearch::default()).unwrap();
        let dev = (m.tau.x - tri.x).hypot(m.tau.y - tri.y);
        pass &= dev < ZETA_TAU_TOL;
        parts.push(format!("s = {s}: tau = ({:.5}, {:.5})", m.tau.x, m.tau.y));
    }
    for s in [0.5, 1.0, 2.0, 3.0, 4.0, 6.0] {
        let (t, q) = (epstein_zeta(tri, s).unwrap(), epstein_zeta(Lattice2D::square(), s).unwrap());
        pass &= t < q;
    }
    let ewald = epstein_zeta(Lattice2D::square(), 4.0).unwrap();
    let direct = direct_zeta(Lattice2D::square(), 4.0, 3000.0);
    let ewald_t = epstein_zeta(tri, 4.0).unwrap();
    let direct_t = direct_zeta(tri, 4.0, 3000.0);
    let gap = (ewald - direct).abs().max((ewald_t - direct_t).abs());
    pass &= gap < EWALD_DIRECT_TOL;
    parts.push(format!("triangular below square for s in {{0.5,1,2,3,4,6}}; s = 4 theta split vs direct sum {gap:.1e}"));
    Outcome::new(pass, parts.join("; "))
}

pub fn c10_circle() -> Outcome {
    let n = 12;
    let kernel = InteractionKernel::log1();
    let energy = |c: &TorusConfiguration| torus_renormalized_energy(c, &kernel, 0.1, 1e-13).unwrap().value;
    let base = energy(&TorusConfiguration::equally_spaced(n).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut least_gap = f64::INFINITY;
    for _ in 0..50 {
        let amp = rng.random_range(0.02..0.45);
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 + amp * rng.random_range(-1.0..1.0)]).collect();
        let c = TorusConfiguration::new(Torus::cube(1, n as f64).unwrap(), pts).unwrap();
        least_gap = least_gap.min(energy(&c) - base);
    }
    Outcome::new(least_gap > 0.0, format!("equally spaced {base:.6}; smallest excess over 50 perturbations {least_gap:.3e}"))
}

pub fn c11_torus() -> Outcome {
    let kernel = InteractionKernel::log2();
    let tri = TorusConfiguration::lattice(Lattice2D::triangular()).unwrap();
    let sq = TorusConfiguration::lattice(Lattice2D::square()).unwrap();
    let gaps: Vec<(f64, f64, f64)> = [0.2, 0.1]
        .iter()
        .map(|&eta| {
            let (_, t) = torus_energy_extrapolated(&tri, &kernel, eta, 3, 2.0, 1e-13).unwrap();
            let (_, q) = torus_energy_extrapolated(&sq, &kernel, eta, 3, 2.0, 1e-13).unwrap();
            (t, q, q - t)
        })
        .collect();
    let (a, b) = (gaps[0].2, gaps[1].2);
    let pass = gaps.iter().all(|g| g.0 < g.1) && (a - b).abs() <= TORUS_GAP_DIGITS * a.abs();
    Outcome::new(
        pass,
        format!("triangular {:.8}, square {:.8}, gap {a:.8} (eta0 = 0.2) vs {b:.8} (eta0 = 0.1)", gaps[0].0, gaps[0].1),
    )
}
