use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Configuration;
use crate::energy::{hamiltonian, mean_field_forces_into};
use crate::error::{usage, Error, Result};
use crate::kernel::InteractionKernel;
use crate::potential::ExternalPotential;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeterministicLaw {
    /// `x_i' = -(1/N) grad_i H_N`
    GradientFlow,
    /// `x_i' = (1/N) J grad_i H_N`, `J` the quarter rotation (d = 2)
    Conservative,
    /// `x_i'' = -(1/N) grad_i H_N`
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
    Verlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StochasticLaw {
    Overdamped,
    ConservativeNoise,
    /// Langevin with velocity friction `gamma` (0 reproduces the undamped form).
    Kinetic { friction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOptions {
    /// Keep every `stride`-th configuration (plus the first and last).
    pub stride: usize,
    /// Minimal admissible pair distance; `None` means `10 eps` times the initial extent.
    pub collision_guard: Option<f64>,
    /// Step halvings tried by the stochastic schemes before reporting a collision.
    pub max_halvings: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { stride: 1, collision_guard: None, max_halvings: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Configuration<f64>>,
    /// Energy after every step: `H_N` for first-order laws, `(1/2) sum |v|^2 + H_N / N` for Newton.
    pub energy_times: Vec<f64>,
    pub energies: Vec<f64>,
    pub dt: f64,
    pub scheme: String,
    pub law: String,
    pub seed: Option<u64>,
    /// Steps that needed step halving (stochastic runs).
    pub halved_steps: usize,
}

impl Trajectory {
    /// `t, x_1, ..., x_{Nd}` per snapshot.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        let first = &self.snapshots[0];
        for i in 0..first.len() {
            for a in 0..first.dim() {
                let _ = write!(s, ",x{i}_{a}");
            }
        }
        s.push('\n');
        for (t, c) in self.times.iter().zip(&self.snapshots) {
            let _ = write!(s, "{t:.16e}");
            for x in c.positions() {
                let _ = write!(s, ",{x:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn energy_csv(&self) -> String {
        let mut s = String::from("t,energy\n");
        for (t, e) in self.energy_times.iter().zip(&self.energies) {
            let _ = writeln!(s, "{t:.16e},{e:.16e}");
        }
        s
    }

    /// Largest deviation of the energy series from its initial value.
    pub fn max_energy_deviation(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max)
    }

    /// Least-squares slope of the energy series against time.
    pub fn energy_slope(&self) -> f64 {
        let n = self.energies.len() as f64;
        let mt = self.energy_times.iter().sum::<f64>() / n;
        let me = self.energies.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, e) in self.energy_times.iter().zip(&self.energies) {
            num += (t - mt) * (e - me);
            den += (t - mt) * (t - mt);
        }
        num / den
    }
}

fn min_distance(dim: usize, x: &[f64]) -> f64 {
    let n = x.len() / dim;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let r2: f64 = (0..dim).map(|a| (x[i * dim + a] - x[j * dim + a]).powi(2)).sum();
            best = best.min(r2);
        }
    }
    best.sqrt()
}

struct System<'a> {
    dim: usize,
    kernel: &'a InteractionKernel,
    potential: &'a ExternalPotential,
    guard: f64,
}

impl System<'_> {
    /// `-(1/N) grad H_N`
    fn force(&self, x: &[f64], out: &mut [f64], time: f64) -> Result<()> {
        mean_field_forces_into(self.dim, x, self.kernel, self.potential, out).map_err(|_| Error::Collision {
            time,
            distance: min_distance(self.dim, x),
        })
    }

    /// Velocity field of a first-order law.
    fn velocity(&self, law: DeterministicLaw, x: &[f64], out: &mut [f64], time: f64) -> Result<()> {
        self.force(x, out, time)?;
        if law == DeterministicLaw::Conservative {
            rotate_minus(out);
        }
        Ok(())
    }

    fn check(&self, x: &[f64], time: f64) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Collision { time, distance: min_distance(self.dim, x) });
        }
        if x.len() / self.dim > 1 {
            let d = min_distance(self.dim, x);
            if d < self.guard {
                return Err(Error::Collision { time, distance: d });
            }
        }
        Ok(())
    }

    fn energy(&self, x: &[f64]) -> Result<f64> {
        hamiltonian(&Configuration::new(self.dim, x.to_vec())?, self.kernel, self.potential)
    }
}

/// `(1/N) J grad H = -J F` with `J (a, b) = (-b, a)`.
fn rotate_minus(f: &mut [f64]) {
    for p in f.chunks_mut(2) {
        let (a, b) = (p[0], p[1]);
        p[0] = b;
        p[1] = -a;
    }
}

fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return usage("time step must be positive");
    }
    if !(t_end >= 0.0) {
        return usage("final time must be non-negative");
    }
    Ok(((t_end / dt) - 1e-9).ceil().max(0.0) as usize)
}

fn guard_for(config: &Configuration<f64>, options: &IntegrationOptions) -> f64 {
    options.collision_guard.unwrap_or(10.0 * f64::EPSILON * config.extent().max(1.0))
}

/// Integrate a deterministic law from `config` up to time `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_deterministic(
    config: &Configuration<f64>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    law: DeterministicLaw,
    dt: f64,
    t_end: f64,
    scheme: Scheme,
    options: &IntegrationOptions,
) -> Result<Trajectory> {
    let steps = step_count(dt, t_end)?;
    let dim = config.dim();
    if kernel.dim() != dim {
        return usage("kernel and configuration dimensions differ");
    }
    if law == DeterministicLaw::Conservative && dim != 2 {
        return usage("the conservative law is defined here for d = 2 (quarter rotation)");
    }
    if scheme == Scheme::Verlet && law != DeterministicLaw::Newton {
        return usage("velocity Verlet applies to the Newton law only");
    }
    let n = config.len();
    if n > 1 && config.min_pair_distance() == 0.0 {
        return usage("initial points must be pairwise distinct");
    }
    let sys = System { dim, kernel, potential, guard: guard_for(config, options) };
    let newton = law == DeterministicLaw::Newton;
    let mut x = config.positions().to_vec();
    let mut v = if newton {
        config.velocities().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    } else {
        Vec::new()
    };
    let energy = |x: &[f64], v: &[f64]| -> Result<f64> {
        let h = sys.energy(x)?;
        Ok(if newton { 0.5 * v.iter().map(|u| u * u).sum::<f64>() + h / n as f64 } else { h })
    };
    let snapshot = |x: &[f64], v: &[f64]| -> Result<Configuration<f64>> {
        let c = Configuration::new(dim, x.to_vec())?;
        if newton { c.with_velocities(v.to_vec()) } else { Ok(c) }
    };
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![snapshot(&x, &v)?],
        energy_times: vec![0.0],
        energies: vec![energy(&x, &v)?],
        dt,
        scheme: format!("{scheme:?}").to_lowercase(),
        law: format!("{law:?}"),
        seed: None,
        halved_steps: 0,
    };
    let m = x.len();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    let mut l3 = vec![0.0; m];
    let mut l4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    let mut tmpv = vec![0.0; m];
    let mut force = vec![0.0; m];
    if scheme == Scheme::Verlet {
        sys.force(&x, &mut force, 0.0)?;
    }
    let mut t = 0.0;
    for step in 1..=steps {
        let h = dt.min(t_end - t);
        match (scheme, newton) {
            (Scheme::Euler, false) => {
                sys.velocity(law, &x, &mut k1, t)?;
                x.iter_mut().zip(&k1).for_each(|(a, b)| *a += h * b);
            }
            (Scheme::Euler, true) => {
                sys.force(&x, &mut k1, t)?;
                for i in 0..m {
                    x[i] += h * v[i];
                    v[i] += h * k1[i];
                }
            }
            (Scheme::Rk4, false) => {
                sys.velocity(law, &x, &mut k1, t)?;
                axpy(&x, 0.5 * h, &k1, &mut tmp);
                sys.velocity(law, &tmp, &mut k2, t)?;
                axpy(&x, 0.5 * h, &k2, &mut tmp);
                sys.velocity(law, &tmp, &mut k3, t)?;
                axpy(&x, h, &k3, &mut tmp);
                sys.velocity(law, &tmp, &mut k4, t)?;
                for i in 0..m {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            (Scheme::Rk4, true) => {
                // k: position derivatives (velocities), l: accelerations
                k1.copy_from_slice(&v);
                sys.force(&x, &mut l1, t)?;
                axpy(&x, 0.5 * h, &k1, &mut tmp);
                axpy(&v, 0.5 * h, &l1, &mut tmpv);
                k2.copy_from_slice(&tmpv);
                sys.force(&tmp, &mut l2, t)?;
                axpy(&x, 0.5 * h, &k2, &mut tmp);
                axpy(&v, 0.5 * h, &l2, &mut tmpv);
                k3.copy_from_slice(&tmpv);
                sys.force(&tmp, &mut l3, t)?;
                axpy(&x, h, &k3, &mut tmp);
                axpy(&v, h, &l3, &mut tmpv);
                k4.copy_from_slice(&tmpv);
                sys.force(&tmp, &mut l4, t)?;
                for i in 0..m {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    v[i] += h / 6.0 * (l1[i] + 2.0 * l2[i] + 2.0 * l3[i] + l4[i]);
                }
            }
            (Scheme::Verlet, _) => {
                for i in 0..m {
                    v[i] += 0.5 * h * force[i];
                    x[i] += h * v[i];
                }
                sys.force(&x, &mut force, t + h)?;
                for i in 0..m {
                    v[i] += 0.5 * h * force[i];
                }
            }
        }
        t = if step == steps { t_end } else { step as f64 * dt };
        sys.check(&x, t)?;
        traj.energy_times.push(t);
        traj.energies.push(energy(&x, &v)?);
        if step % options.stride.max(1) == 0 || step == steps {
            traj.times.push(t);
            traj.snapshots.push(snapshot(&x, &v)?);
        }
    }
    Ok(traj)
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * y[i];
    }
}

/// Integrate a noisy law with noise `sqrt(1/beta) dW` per coordinate. `beta = inf` switches the
/// noise off while consuming the same random stream.
#[allow(clippy::too_many_arguments)]
pub fn evolve_stochastic(
    config: &Configuration<f64>,
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    law: StochasticLaw,
    beta: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
    options: &IntegrationOptions,
) -> Result<Trajectory> {
    if !(beta > 0.0) {
        return usage("beta must be positive");
    }
    let steps = step_count(dt, t_end)?;
    let dim = config.dim();
    if kernel.dim() != dim {
        return usage("kernel and configuration dimensions differ");
    }
    if law == StochasticLaw::ConservativeNoise && dim != 2 {
        return usage("the conservative law is defined here for d = 2 (quarter rotation)");
    }
    let kinetic = match law {
        StochasticLaw::Kinetic { friction } => {
            if !(friction >= 0.0) {
                return usage("friction must be non-negative");
            }
            if config.velocities().is_none() {
                return usage("the kinetic law needs velocities");
            }
            Some(friction)
        }
        _ => None,
    };
    let n = config.len();
    let sys = System { dim, kernel, potential, guard: guard_for(config, options) };
    let sigma = (1.0 / beta).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = config.positions().to_vec();
    let mut v = config.velocities().map(<[f64]>::to_vec).unwrap_or_default();
    let energy = |x: &[f64], v: &[f64]| -> Result<f64> {
        let h = sys.energy(x)?;
        Ok(if kinetic.is_some() { 0.5 * v.iter().map(|u| u * u).sum::<f64>() + h / n as f64 } else { h })
    };
    let snapshot = |x: &[f64], v: &[f64]| -> Result<Configuration<f64>> {
        let c = Configuration::new(dim, x.to_vec())?;
        if kinetic.is_some() { c.with_velocities(v.to_vec()) } else { Ok(c) }
    };
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![snapshot(&x, &v)?],
        energy_times: vec![0.0],
        energies: vec![energy(&x, &v)?],
        dt,
        scheme: if kinetic.is_some() { "splitting".into() } else { "euler-maruyama".into() },
        law: format!("{law:?}"),
        seed: Some(seed),
        halved_steps: 0,
    };
    let m = x.len();
    let mut noise = vec![0.0; m];
    let mut work = Work { f: vec![0.0; m] };
    let mut t = 0.0;
    for step in 1..=steps {
        let h = dt.min(t_end - t);
        // Brownian increments over the full step
        for w in noise.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = h.sqrt() * z;
        }
        let mut halvings = 0;
        loop {
            let attempt = substeps(&sys, law, kinetic, sigma, &x, &v, &noise, h, t, halvings, &mut rng, &mut work);
            match attempt {
                Ok((nx, nv)) => {
                    x = nx;
                    v = nv;
                    break;
                }
                Err(Error::Collision { time, distance }) => {
                    if halvings >= options.max_halvings {
                        return Err(Error::Collision { time, distance });
                    }
                    halvings += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if halvings > 0 {
            traj.halved_steps += 1;
        }
        t = if step == steps { t_end } else { step as f64 * dt };
        traj.energy_times.push(t);
        traj.energies.push(energy(&x, &v)?);
        if step % options.stride.max(1) == 0 || step == steps {
            traj.times.push(t);
            traj.snapshots.push(snapshot(&x, &v)?);
        }
    }
    Ok(traj)
}

struct Work {
    f: Vec<f64>,
}

/// Split the step into `2^halvings` pieces; the increments of the pieces are a Brownian bridge
/// refinement of the full-step increment, so the path law is unchanged.
#[allow(clippy::too_many_arguments)]
fn substeps(
    sys: &System<'_>,
    law: StochasticLaw,
    kinetic: Option<f64>,
    sigma: f64,
    x0: &[f64],
    v0: &[f64],
    increment: &[f64],
    h: f64,
    t: f64,
    halvings: usize,
    rng: &mut ChaCha8Rng,
    work: &mut Work,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pieces = 1usize << halvings;
    let hs = h / pieces as f64;
    let m = x0.len();
    let mut incs = vec![increment.to_vec()];
    for _ in 0..halvings {
        let len = incs[0].len();
        let dur = h / incs.len() as f64;
        let mut next = Vec::with_capacity(incs.len() * 2);
        for inc in &incs {
            let mut a = vec![0.0; len];
            let mut b = vec![0.0; len];
            for k in 0..len {
                let z: f64 = StandardNormal.sample(rng);
                a[k] = 0.5 * inc[k] + 0.5 * dur.sqrt() * z;
                b[k] = inc[k] - a[k];
            }
            next.push(a);
            next.push(b);
        }
        incs = next;
    }
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    for (p, dw) in incs.iter().enumerate() {
        let tp = t + p as f64 * hs;
        match kinetic {
            None => {
                sys.force(&x, &mut work.f, tp)?;
                if law == StochasticLaw::ConservativeNoise {
                    rotate_minus(&mut work.f);
                }
                for i in 0..m {
                    x[i] += hs * work.f[i] + sigma * dw[i];
                }
            }
            Some(gamma) => {
                // kick, drift, exact Ornstein-Uhlenbeck velocity step, drift, kick
                sys.force(&x, &mut work.f, tp)?;
                for i in 0..m {
                    v[i] += 0.5 * hs * work.f[i];
                    x[i] += 0.5 * hs * v[i];
                }
                let (decay, scale) = if gamma > 0.0 {
                    let e = (-gamma * hs).exp();
                    (e, ((1.0 - e * e) / (2.0 * gamma * hs)).sqrt())
                } else {
                    (1.0, 1.0)
                };
                for i in 0..m {
                    v[i] = decay * v[i] + sigma * scale * dw[i];
                    x[i] += 0.5 * hs * v[i];
                }
                sys.check(&x, tp + hs)?;
                sys.force(&x, &mut work.f, tp + hs)?;
                for i in 0..m {
                    v[i] += 0.5 * hs * work.f[i];
                }
            }
        }
        sys.check(&x, tp + hs)?;
    }
    Ok((x, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vortices(n: usize, seed: u64) -> Configuration<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Configuration::new(2, pts).unwrap()
    }

    #[test]
    fn single_particle_gradient_flow() {
        let c = Configuration::new(2, vec![1.0, 0.0]).unwrap();
        let tr = evolve_deterministic(
            &c,
            &InteractionKernel::log2(),
            &ExternalPotential::quadratic(1.0),
            DeterministicLaw::GradientFlow,
            1e-2,
            1.0,
            Scheme::Rk4,
            &IntegrationOptions::default(),
        )
        .unwrap();
        let last = tr.snapshots.last().unwrap().point(0).to_vec();
        assert!((last[0] - (-2.0f64).exp()).abs() < 1e-8 && last[1].abs() < 1e-15);
        assert_eq!(tr.times.len(), 101);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn vortex_pair_rotates_rigidly() {
        let c = Configuration::new(2, vec![0.5, 0.0, -0.5, 0.0]).unwrap();
        let tr = evolve_deterministic(
            &c,
            &InteractionKernel::log2(),
            &ExternalPotential::zero(),
            DeterministicLaw::Conservative,
            1e-3,
            10.0,
            Scheme::Rk4,
            &IntegrationOptions { stride: 100, ..Default::default() },
        )
        .unwrap();
        let drift = tr.snapshots.iter().map(|s| (s.min_pair_distance() - 1.0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-9, "{drift}");
        // each vortex moves at speed 1 / (N r) on a circle of radius r / 2: clockwise, angular speed 1
        let p = tr.snapshots.last().unwrap().point(0).to_vec();
        let angle = p[1].atan2(p[0]);
        let expect = (-10.0f64).sin().atan2((-10.0f64).cos());
        assert!((angle - expect).abs() < 1e-8, "{angle} {expect}");
    }

    #[test]
    fn gradient_flow_decreases_energy() {
        let c = vortices(20, 3);
        let tr = evolve_deterministic(
            &c,
            &InteractionKernel::log2(),
            &ExternalPotential::quadratic(1.0),
            DeterministicLaw::GradientFlow,
            1e-3,
            0.5,
            Scheme::Euler,
            &IntegrationOptions::default(),
        )
        .unwrap();
        assert!(tr.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn rk4_vortex_energy_drift_is_fourth_order() {
        let c = vortices(12, 5);
        let k = InteractionKernel::log2();
        let drift = |dt: f64| {
            let tr = evolve_deterministic(
                &c,
                &k,
                &ExternalPotential::zero(),
                DeterministicLaw::Conservative,
                dt,
                1.0,
                Scheme::Rk4,
                &IntegrationOptions { stride: 1000, ..Default::default() },
            )
            .unwrap();
            tr.max_energy_deviation()
        };
        let (a, b) = (drift(4e-3), drift(2e-3));
        let order = (a / b).log2();
        assert!(order >= 3.5, "order {order} ({a:e} -> {b:e})");
    }

    #[test]
    fn verlet_energy_error_is_second_order_and_bounded() {
        let c = vortices(8, 11).with_velocities(vec![0.0; 16]).unwrap();
        let k = InteractionKernel::log2();
        let run = |dt: f64| {
            evolve_deterministic(
                &c,
                &k,
                &ExternalPotential::quadratic(1.0),
                DeterministicLaw::Newton,
                dt,
                10.0,
                Scheme::Verlet,
                &IntegrationOptions { stride: 10000, ..Default::default() },
            )
            .unwrap()
        };
        let (a, b) = (run(2e-3), run(1e-3));
        let ratio = a.max_energy_deviation() / b.max_energy_deviation();
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
        for tr in [&a, &b] {
            assert!(tr.energy_slope().abs() * 10.0 < 0.1 * tr.max_energy_deviation());
        }
    }

    #[test]
    fn noiseless_limit_matches_gradient_flow() {
        let c = vortices(10, 2);
        let k = InteractionKernel::log2();
        let v = ExternalPotential::quadratic(1.0);
        let det = evolve_deterministic(&c, &k, &v, DeterministicLaw::GradientFlow, 1e-3, 0.2, Scheme::Euler, &Default::default())
            .unwrap();
        let sto = evolve_stochastic(&c, &k, &v, StochasticLaw::Overdamped, f64::INFINITY, 1e-3, 0.2, 9, &Default::default())
            .unwrap();
        let (a, b) = (det.snapshots.last().unwrap(), sto.snapshots.last().unwrap());
        let err = a.positions().iter().zip(b.positions()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn stochastic_runs_are_seeded() {
        let c = vortices(5, 1);
        let k = InteractionKernel::log2();
        let v = ExternalPotential::quadratic(1.0);
        let run = |seed| {
            evolve_stochastic(&c, &k, &v, StochasticLaw::ConservativeNoise, 2.0, 1e-3, 0.1, seed, &Default::default())
                .unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
        assert!(matches!(
            evolve_stochastic(&c, &k, &v, StochasticLaw::Kinetic { friction: 0.0 }, 1.0, 1e-3, 0.1, 1, &Default::default()),
            Err(Error::Usage(_))
        ));
        let cv = c.clone().with_velocities(vec![0.0; 10]).unwrap();
        let tr = evolve_stochastic(&cv, &k, &v, StochasticLaw::Kinetic { friction: 1.0 }, 1.0, 1e-3, 0.1, 1, &Default::default())
            .unwrap();
        assert!(tr.snapshots.last().unwrap().velocities().is_some());
        assert!(matches!(
            evolve_stochastic(&c, &k, &v, StochasticLaw::Overdamped, 0.0, 1e-3, 0.1, 1, &Default::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn usage_and_collision_errors() {
        let c = Configuration::new(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let k = InteractionKernel::log2();
        let v = ExternalPotential::quadratic(1.0);
        let opts = IntegrationOptions::default();
        assert!(matches!(
            evolve_deterministic(&c, &k, &v, DeterministicLaw::GradientFlow, 0.0, 1.0, Scheme::Rk4, &opts),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            evolve_deterministic(&c, &k, &v, DeterministicLaw::GradientFlow, 1e-2, 1.0, Scheme::Verlet, &opts),
            Err(Error::Usage(_))
        ));
        // the pair settles at separation 1/sqrt(2), below a guard of 0.8
        let guarded = IntegrationOptions { collision_guard: Some(0.8), ..Default::default() };
        match evolve_deterministic(&c, &k, &v, DeterministicLaw::GradientFlow, 1e-2, 5.0, Scheme::Rk4, &guarded) {
            Err(Error::Collision { time, distance }) => assert!(time > 0.0 && distance < 0.8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let c = Configuration::new(1, vec![0.5, -0.5]).unwrap();
        let tr = evolve_deterministic(
            &c,
            &InteractionKernel::log1(),
            &ExternalPotential::quadratic(1.0),
            DeterministicLaw::GradientFlow,
            0.1,
            0.2,
            Scheme::Euler,
            &Default::default(),
        )
        .unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x0_0,x1_0");
        assert_eq!(lines.len(), 4);
        assert_eq!(tr.energy_csv().lines().count(), 4);
    }
}
