use std::f64::consts::PI;
use std::sync::OnceLock;

use coulomb_core::fluctuations::{clt_harness, number_variance, poisson_sample, TestFunction};
use coulomb_core::gibbs::{
    anneal_minimize, box_gas_log_z, free_energy_thermo_integration, metropolis_chain, quadrature_gibbs_oracle, AnnealSchedule,
    RunParameters, SampleSet,
};
use coulomb_core::stats::least_squares;
use coulomb_core::{CircleLaw, ExternalPotential, Grid, GriddedDensity, InteractionKernel, MeanFieldReference};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const CIRCLE_L1_TOL: f64 = 0.1;
const MINIMIZER_REL_TOL: f64 = 0.05;
const LOG_COEFFICIENT_SPREAD: f64 = 0.05;
const CLT_VARIANCE_TOL: f64 = 0.25;
/// 95% quantile of chi-square with 2 degrees of freedom.
const CHI2_2DOF_95: f64 = 5.991;
const KS_TOL: f64 = 0.05;
const HYPERUNIFORM_GAP: f64 = 0.3;
const FREE_ENERGY_TOL: f64 = 0.02;

fn log_gas(n: usize, beta: f64) -> RunParameters {
    RunParameters::new(InteractionKernel::log2(), ExternalPotential::quadratic(1.0), n, beta)
}

/// Area of the annulus `[a, b]` inside the disc of radius `r`.
fn annulus_in_disc(a: f64, b: f64, r: f64) -> f64 {
    PI * (b.min(r).powi(2) - a.min(r).powi(2))
}

pub fn c01_circle_law() -> Outcome {
    let n = 200;
    // 2e6 single-site proposals = 1e4 sweeps of 200 points
    let params = RunParameters { sweeps: 10_000, burn_in: 1000, stride: 10, seed: 1, ..log_gas(n, 1.0) };
    let set = metropolis_chain(&params).unwrap();
    let circle = CircleLaw::new(1.0).unwrap();
    let width = 0.02;
    let bins = 60;
    let mut counts = vec![0.0; bins];
    let mut outside = 0.0;
    for c in &set.snapshots {
        for p in c.points() {
            let r = p[0].hypot(p[1]);
            match ((r / width) as usize).min(bins) {
                k if k < bins => counts[k] += 1.0,
                _ => outside += 1.0,
            }
        }
    }
    let total = (n * set.snapshots.len()) as f64;
    let mut l1 = outside / total;
    for (k, c) in counts.iter().enumerate() {
        let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
        let exact_mass = circle.height() * annulus_in_disc(a, b, circle.radius());
        l1 += (c / total - exact_mass).abs();
    }
    Outcome::new(l1 < CIRCLE_L1_TOL, format!("N = 200, {} snapshots: L1 distance {l1:.4}", set.snapshots.len()))
}

fn annealed_energy(n: usize) -> f64 {
    let r = anneal_minimize(&InteractionKernel::log2(), &ExternalPotential::quadratic(1.0), n, &AnnealSchedule::default(), 1).unwrap();
    r.energy
}

pub fn c08_minimizers() -> Outcome {
    let iv = CircleLaw::new(1.0).unwrap().energy();
    let small: Vec<f64> = [50, 100, 200].iter().map(|&n| annealed_energy(n) / (n * n) as f64).collect();
    let monotone = small.windows(2).all(|w| w[1] > w[0] && w[1] < iv);
    let rel = (small[2] / iv - 1.0).abs();

    let ns = [64usize, 96, 128, 192, 256, 384, 512];
    let y: Vec<f64> = ns.iter().map(|&n| (annealed_energy(n) - (n * n) as f64 * iv) / n as f64).collect();
    let fit = |idx: &[usize]| {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| vec![(ns[i] as f64).ln(), 1.0]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        least_squares(&rows, &ys).unwrap()
    };
    let all = fit(&[0, 1, 2, 3, 4, 5, 6]);
    let subsets: [&[usize]; 3] = [&[0, 1, 2, 3, 4], &[2, 3, 4, 5, 6], &[0, 2, 4, 6]];
    let coeffs: Vec<f64> = subsets.iter().map(|s| fit(s).coefficients[0]).collect();
    let a = all.coefficients[0];
    let spread = coeffs.iter().map(|c| (c - a).abs()).fold(0.0, f64::max);
    let sign = if a < 0.0 { "negative" } else { "positive" };
    Outcome::new(
        monotone && rel < MINIMIZER_REL_TOL && spread < LOG_COEFFICIENT_SPREAD,
        format!(
            "H/N^2 at N = 50, 100, 200: {:.5}, {:.5}, {:.5} vs I_V = {iv:.6} (gap {rel:.2e}); \
             (H - N^2 I_V)/N = {a:.4} (+- {:.4}) log N + {:.4}, {sign} coefficient, subset spread {spread:.3}",
            small[0],
            small[1],
            small[2],
            all.std_errors[0],
            all.coefficients[1]
        ),
    )
}

const CLT_NS: [usize; 3] = [64, 128, 256];

/// Exact variance of `sum f(x_i)` for radial `f` at `beta = 2`, where `exp(-2 H_N)` is the
/// determinantal ensemble with weight `exp(-2N|z|^2)`: the sum over `k < N` of the variance of
/// `f(r)` with `r^2 ~ Gamma(k + 1, rate 2N)`.
fn determinantal_variance(n: usize, f: &TestFunction) -> f64 {
    let r_max = f.support_radius();
    let steps = 20_000;
    let h = r_max / steps as f64;
    let rate = 2.0 * n as f64;
    let mut total = 0.0;
    let mut log_fact = 0.0;
    for k in 0..n {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        let (mut e1, mut e2) = (0.0, 0.0);
        for j in 0..=steps {
            let r = j as f64 * h;
            let w = if j == 0 || j == steps { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            if r == 0.0 {
                continue;
            }
            let log_p = std::f64::consts::LN_2 + r.ln() + (k + 1) as f64 * rate.ln() + 2.0 * k as f64 * r.ln() - rate * r * r - log_fact;
            let p = w * log_p.exp();
            let v = f.value(&[r, 0.0]);
            e1 += p * v;
            e2 += p * v * v;
        }
        let (e1, e2) = (e1 * h / 3.0, e2 * h / 3.0);
        total += e2 - e1 * e1;
    }
    total
}

/// Chains at beta = 2 shared by the fluctuation criteria.
fn clt_samples() -> &'static Vec<SampleSet> {
    static SETS: OnceLock<Vec<SampleSet>> = OnceLock::new();
    SETS.get_or_init(|| {
        CLT_NS
            .iter()
            .map(|&n| {
                let p = RunParameters { sweeps: 42_000, burn_in: 2000, stride: 4, seed: 3, ..log_gas(n, 2.0) };
                metropolis_chain(&p).unwrap()
            })
            .collect()
    })
}

pub fn c12_clt() -> Outcome {
    let circle = CircleLaw::new(1.0).unwrap();
    let f = TestFunction::standard_bump(2);
    let reports: Vec<_> = clt_samples().iter().map(|s| clt_harness(s, &f, &circle, 2.0).unwrap()).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &reports {
        let ratio = r.variance_ratio();
        pass &= r.mean_consistent_with_zero() && (ratio - 1.0).abs() < CLT_VARIANCE_TOL && r.ks_distance < KS_TOL;
        parts.push(format!(
            "N = {}: mean {:.4} +- {:.4}, variance {:.4} +- {:.4} (ratio {ratio:.3}, exact finite-N {:.4}), KS {:.4}",
            r.n,
            r.mean.mean,
            r.mean.std_error,
            r.variance.mean,
            r.variance.std_error,
            determinantal_variance(r.n, &f),
            r.ks_distance
        ));
    }
    // homogeneity of the variance across N
    let w: Vec<f64> = reports.iter().map(|r| r.variance.std_error.powi(-2)).collect();
    let pooled = reports.iter().zip(&w).map(|(r, w)| w * r.variance.mean).sum::<f64>() / w.iter().sum::<f64>();
    let chi2: f64 = reports.iter().zip(&w).map(|(r, w)| w * (r.variance.mean - pooled).powi(2)).sum();
    pass &= chi2 < CHI2_2DOF_95;
    parts.push(format!("predicted variance {:.4}, homogeneity chi2 {chi2:.2} (2 dof)", reports[0].predicted_variance));
    Outcome::new(pass, parts.join("; "))
}

pub fn c13_number_variance() -> Outcome {
    let circle = CircleLaw::new(1.0).unwrap();
    let radii = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
    let centre = [0.0, 0.0];
    let set = &clt_samples()[2];
    let gibbs = number_variance(&set.snapshots, &circle, &centre, &radii).unwrap();
    let (g_slope, g_se) = gibbs.growth_exponent().unwrap();

    let grid = Grid::symmetric(2, 0.8, 160).unwrap();
    let density = GriddedDensity::from_fn(grid, |x| circle.density(x)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let poisson: Vec<_> = (0..4000).map(|_| poisson_sample(&density, set.params.n as f64, &mut rng).unwrap()).collect();
    let pois = number_variance(&poisson, &circle, &centre, &radii).unwrap();
    let (p_slope, p_se) = pois.growth_exponent().unwrap();
    let gap = p_slope - g_slope;
    Outcome::new(
        gap > HYPERUNIFORM_GAP,
        format!("N = {}: beta = 2 exponent {g_slope:.3} +- {g_se:.3}, Poisson {p_slope:.3} +- {p_se:.3}, gap {gap:.3}", set.params.n),
    )
}

pub fn c14_free_energy() -> Outcome {
    let kernel = InteractionKernel::log1();
    let v = ExternalPotential::quadratic(1.0);
    let (box_half, panels) = (8.0, 300);
    let betas: Vec<f64> = (0..40).map(|i| 0.1 * 40f64.powf(i as f64 / 39.0)).collect();
    let oracle = |b: f64| quadrature_gibbs_oracle(&kernel, &v, b, 2, box_half, panels, &[0.0, 1.0]).unwrap().log_z;
    let base = RunParameters { sweeps: 300_000, burn_in: 5000, seed: 11, box_half: Some(box_half), ..RunParameters::new(kernel, v.clone(), 2, 1.0) };
    let ti = free_energy_thermo_integration(&base, &betas, oracle(betas[0])).unwrap();
    let worst = betas.iter().zip(&ti.log_z).map(|(&b, z)| (z - oracle(b)).abs()).fold(0.0, f64::max);

    let iv = CircleLaw::new(1.0).unwrap().energy();
    let beta = 2.0;
    let mut trend = Vec::new();
    for n in [16usize, 32, 64] {
        let box_half = 2.0;
        let mut grid = vec![0.0];
        grid.extend((0..40).map(|i| 1e-6 * (beta / 1e-6f64).powf(i as f64 / 39.0)));
        let p = RunParameters { sweeps: 6000, burn_in: 1000, seed: 14, box_half: Some(box_half), ..log_gas(n, beta) };
        let ti = free_energy_thermo_integration(&p, &grid, box_gas_log_z(n, 2, box_half)).unwrap();
        let value = ti.log_z.last().unwrap() / (-beta * (n * n) as f64);
        trend.push((n, value, (value - iv).abs()));
    }
    let approaching = trend.windows(2).all(|w| w[1].2 < w[0].2);
    Outcome::new(
        worst < FREE_ENERGY_TOL && approaching,
        format!(
            "N = 2 worst |log Z - oracle| over beta in [0.1, 4]: {worst:.4}; log Z/(-beta N^2) at beta = 2: {} vs I_V = {iv:.5}",
            trend.iter().map(|(n, v, _)| format!("N = {n}: {v:.5}")).collect::<Vec<_>>().join(", ")
        ),
    )
}
