use coulomb_core::dynamics::{
    evolve_deterministic, evolve_stochastic, meanfield_radial_solve, patch_reference, DeterministicLaw, IntegrationOptions,
    MeanFieldOptions, Scheme, StochasticLaw,
};
use coulomb_core::gibbs::quadrature_gibbs_oracle;
use coulomb_core::stats::{batch_means, histogram, total_variation};
use coulomb_core::{Configuration, ExternalPotential, InteractionKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const PATCH_PARTICLE_TOL: f64 = 0.05;
const PATCH_PDE_TOL: f64 = 0.01;
const CONSERVATION_TOL: f64 = 1e-6;
const VERLET_RATIO_SLACK: f64 = 0.6;
const OU_VARIANCE_TOL: f64 = 0.03;
const SEPARATION_TV_TOL: f64 = 0.02;

pub fn c05_patch() -> Outcome {
    let kernel = InteractionKernel::log2();
    let zero = ExternalPotential::zero();
    let start = Configuration::sunflower(1000, 1.0).unwrap();
    let opts = IntegrationOptions { stride: 10, ..Default::default() };
    let tr = evolve_deterministic(&start, &kernel, &zero, DeterministicLaw::GradientFlow, 0.01, 1.0, Scheme::Rk4, &opts).unwrap();
    let mut worst = 0.0f64;
    let (mut sxx, mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (t, c) in tr.times.iter().zip(&tr.snapshots) {
        let n = c.len() as f64;
        let mean: Vec<f64> = (0..2).map(|a| c.points().map(|p| p[a]).sum::<f64>() / n).collect();
        let r2 = 2.0 * c.points().map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)).sum::<f64>() / n;
        worst = worst.max((r2 / (1.0 + 2.0 * t) - 1.0).abs());
        sxx += t * t;
        sxy += t * r2;
        sx += t;
        sy += r2;
    }
    let m = tr.times.len() as f64;
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;

    let pde = meanfield_radial_solve(
        3.0,
        600,
        |r| if r < 1.0 { std::f64::consts::FRAC_1_PI } else { 0.0 },
        &zero,
        None,
        1e-3,
        1.0,
        &MeanFieldOptions { record_every: 0.1, ..Default::default() },
    )
    .unwrap();
    let pde_worst = (0..pde.times.len())
        .map(|k| (pde.effective_radius(k) / patch_reference(1.0, pde.times[k]).unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        worst < PATCH_PARTICLE_TOL && pde_worst < PATCH_PDE_TOL,
        format!(
            "N = 1000: R^2 fit {intercept:.4} + {slope:.4} t, worst relative gap to 1 + 2t {worst:.2e}; \
             radial PDE worst radius gap {pde_worst:.2e}"
        ),
    )
}

fn jittered_sunflower(n: usize, radius: f64, seed: u64) -> Configuration<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Configuration::sunflower(n, radius).unwrap();
    let jitter = 0.1 * radius / (n as f64).sqrt();
    for x in c.positions_mut() {
        *x += jitter * rng.random_range(-1.0..1.0);
    }
    c
}

pub fn c06_conservation() -> Outcome {
    let kernel = InteractionKernel::log2();
    let v = ExternalPotential::quadratic(1.0);
    let opts = IntegrationOptions { stride: 1000, ..Default::default() };
    let vortices = jittered_sunflower(50, 0.7, 6);
    let cons = evolve_deterministic(&vortices, &kernel, &v, DeterministicLaw::Conservative, 1e-3, 10.0, Scheme::Rk4, &opts).unwrap();
    let drift = cons.max_energy_deviation();

    let start = jittered_sunflower(20, 0.5, 7).with_velocities(vec![0.0; 40]).unwrap();
    let runs: Vec<_> = [2e-3, 1e-3, 5e-4]
        .iter()
        .map(|&dt| evolve_deterministic(&start, &kernel, &v, DeterministicLaw::Newton, dt, 10.0, Scheme::Verlet, &opts).unwrap())
        .collect();
    let devs: Vec<f64> = runs.iter().map(|r| r.max_energy_deviation()).collect();
    let ratios: Vec<f64> = devs.windows(2).map(|w| w[0] / w[1]).collect();
    // a secular trend would show as a slope comparable to the oscillation amplitude over the run
    let flat = runs.iter().all(|r| r.energy_slope().abs() * 10.0 < 0.1 * r.max_energy_deviation());
    let pass = drift < CONSERVATION_TOL && ratios.iter().all(|r| (r - 4.0).abs() < VERLET_RATIO_SLACK) && flat;
    Outcome::new(
        pass,
        format!(
            "50 vortices, RK4 dt 1e-3, T = 10: max |H - H0| {drift:.2e}; Verlet (N = 20) energy error ratios {:.3}, {:.3}, no trend: {flat}",
            ratios[0], ratios[1]
        ),
    )
}

/// Chain stochastic runs of length `chunk` so that long trajectories stay in bounded memory.
#[allow(clippy::too_many_arguments)]
fn long_run(
    start: Configuration<f64>,
    kernel: &InteractionKernel,
    v: &ExternalPotential,
    beta: f64,
    dt: f64,
    chunk: f64,
    chunks: usize,
    stride: usize,
    mut visit: impl FnMut(&Configuration<f64>),
) {
    let opts = IntegrationOptions { stride, ..Default::default() };
    let mut state = start;
    for k in 0..chunks {
        let tr = evolve_stochastic(&state, kernel, v, StochasticLaw::Overdamped, beta, dt, chunk, 1000 + k as u64, &opts).unwrap();
        for c in &tr.snapshots[1..] {
            visit(c);
        }
        state = tr.snapshots.last().unwrap().clone();
    }
}

pub fn c07_invariant_law() -> Outcome {
    let v = ExternalPotential::quadratic(1.0);
    let kernel = InteractionKernel::log1();
    let beta = 1.0;
    let mut xs = Vec::new();
    long_run(Configuration::new(1, vec![0.0]).unwrap(), &kernel, &v, beta, 0.005, 1000.0, 20, 20, |c| xs.push(c.positions()[0]));
    let xs = &xs[100..];
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = batch_means(&sq, 32).unwrap();
    let target = 1.0 / (4.0 * beta);
    let ou_gap = (var.mean / target - 1.0).abs();

    let edges: Vec<f64> = (0..=20).map(|i| 0.2 * i as f64).collect();
    let mut seps = Vec::new();
    long_run(Configuration::new(1, vec![-0.5, 0.5]).unwrap(), &kernel, &v, beta, 1e-3, 1000.0, 50, 100, |c| {
        seps.push((c.positions()[0] - c.positions()[1]).abs())
    });
    let seps = &seps[100..];
    let empirical: Vec<f64> = histogram(seps.iter().copied(), &edges).iter().map(|c| c / seps.len() as f64).collect();
    // invariant density exp(-2 beta H / N) is the Gibbs measure at inverse temperature 2 beta / N
    let oracle = quadrature_gibbs_oracle(&kernel, &v, 2.0 * beta / 2.0, 2, 6.0, 200, &edges).unwrap();
    let tv = total_variation(&empirical, &oracle.separation);
    Outcome::new(
        ou_gap < OU_VARIANCE_TOL && tv < SEPARATION_TV_TOL,
        format!(
            "N = 1 variance {:.4} +- {:.4} vs {target} (relative gap {ou_gap:.2e}); N = 2 separation TV {tv:.4} over {} samples",
            var.mean,
            var.std_error,
            seps.len()
        ),
    )
}
