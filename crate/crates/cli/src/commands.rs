//! One runner per command. Each returns the files it wrote, relative to the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use coulomb_core::dynamics::{
    evolve_deterministic, evolve_stochastic, meanfield_radial_solve, patch_reference, DeterministicLaw, IntegrationOptions,
    MeanFieldOptions, Scheme, StochasticLaw,
};
use coulomb_core::energy::{default_eta, hamiltonian, split_energy, truncated_electric_energy, SpectralBox};
use coulomb_core::equilibrium::{solve_equilibrium, thermal_equilibrium, EquilibriumResult};
use coulomb_core::fluctuations::{clt_harness, number_variance, pair_correlation, TestFunction};
use coulomb_core::gibbs::{anneal_minimize, run_chains, AnnealSchedule, BetaScaling, RunParameters, SampleSet};
use coulomb_core::lattice::{epstein_zeta, minimize_zeta, Lattice2D, ZetaSearch};
use coulomb_core::{
    CircleLaw, Configuration, Error, ExternalPotential, Grid, InteractionKernel, KernelFamily, MeanFieldReference, Semicircle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spec::{Command, ExperimentSpec, SpecError};

#[derive(Debug)]
pub enum RunError {
    Spec(SpecError),
    Core(Error),
    Io(std::io::Error),
}

impl From<SpecError> for RunError {
    fn from(e: SpecError) -> Self {
        Self::Spec(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Spec(e) => write!(f, "{e}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Spec(_) | Self::Core(Error::Usage(_)) => 2,
            _ => 1,
        }
    }
}

type Outcome = Result<Vec<String>, RunError>;

struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn kv(rows: &[(&str, String)]) -> String {
    rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn model(spec: &ExperimentSpec) -> Result<(InteractionKernel, ExternalPotential), RunError> {
    let dim = spec.usize("model.dim")?;
    let kernel = InteractionKernel::parse(spec.raw("model.kernel"), dim)?;
    let potential = ExternalPotential::parse(spec.raw("model.potential"))?;
    Ok((kernel, potential))
}

/// Closed-form equilibrium measure when one is known.
fn analytic_reference(kernel: &InteractionKernel, potential: &ExternalPotential) -> Option<Box<dyn MeanFieldReference>> {
    match (kernel.family(), potential) {
        (KernelFamily::Log2, ExternalPotential::Quadratic { alpha }) if *alpha > 0.0 => Some(Box::new(CircleLaw::new(*alpha).ok()?)),
        (KernelFamily::Log1, ExternalPotential::Quadratic { alpha }) if *alpha > 0.0 => Some(Box::new(Semicircle::new(*alpha).ok()?)),
        _ => None,
    }
}

fn solve_reference(spec: &ExperimentSpec, kernel: &InteractionKernel, potential: &ExternalPotential) -> Result<EquilibriumResult, RunError> {
    let grid = Grid::symmetric(kernel.dim(), spec.f64("grid.half_width")?, spec.usize("grid.cells")?)?;
    Ok(solve_equilibrium(kernel, potential, &grid, spec.f64("solver.tol")?, spec.usize("solver.max_iter")?)?)
}

pub fn run(spec: &ExperimentSpec, dir: &Path) -> Outcome {
    let mut out = Out { dir, files: Vec::new() };
    match spec.command {
        Command::Equilibrium => equilibrium(spec, &mut out)?,
        Command::Flow => flow(spec, &mut out)?,
        Command::Sample => sample(spec, &mut out)?,
        Command::Minimize => minimize(spec, &mut out)?,
        Command::Lattice => lattice(spec, &mut out)?,
        Command::Fluct => fluct(spec, &mut out)?,
        Command::Splitdiag => splitdiag(spec, &mut out)?,
    }
    Ok(out.files)
}

fn equilibrium(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let (kernel, potential) = model(spec)?;
    let eq = match solve_reference(spec, &kernel, &potential) {
        Ok(eq) => eq,
        Err(RunError::Core(Error::EquilibriumUnconverged(best))) => {
            out.write("density.csv", &best.density.to_csv())?;
            return Err(RunError::Core(Error::EquilibriumUnconverged(best)));
        }
        Err(e) => return Err(e),
    };
    out.write("density.csv", &eq.density.to_csv())?;
    let r = &eq.residuals;
    let mut rows = vec![
        ("iterations", eq.iterations.to_string()),
        ("duality_gap", num(eq.gap)),
        ("robin_constant", num(eq.robin_constant)),
        ("energy", num(eq.energy)),
        ("el_residual_on_support", num(r.on_support)),
        ("el_residual_off_support", num(r.off_support)),
        ("support_threshold", num(coulomb_core::equilibrium::SUPPORT_THRESHOLD)),
    ];
    if kernel.dim() == 1 {
        let (a, b) = eq.support_interval();
        rows.push(("support_lower", num(a)));
        rows.push(("support_upper", num(b)));
    } else {
        rows.push(("support_radius", num(eq.support_radius())));
    }
    if let Some(reference) = analytic_reference(&kernel, &potential) {
        let grid = eq.density.grid();
        let err = (0..grid.len()).map(|i| (eq.density.values()[i] - reference.density(&grid.center(i))).abs()).fold(0.0, f64::max);
        rows.push(("closed_form_energy", num(reference.energy())));
        rows.push(("closed_form_robin_constant", num(reference.robin_constant())));
        rows.push(("closed_form_sup_density_error", num(err)));
    }
    if let Some(beta) = spec.opt_f64("solver.thermal_beta")? {
        let grid = eq.density.grid().clone();
        let th = thermal_equilibrium(&kernel, &potential, beta, &grid, spec.f64("solver.tol")?.max(1e-12), spec.usize("solver.max_iter")?)?;
        out.write("thermal_density.csv", &th.density.to_csv())?;
        rows.push(("thermal_beta", num(beta)));
        rows.push(("thermal_iterations", th.iterations.to_string()));
        rows.push(("thermal_update", num(th.update)));
    }
    out.write("report.txt", &kv(&rows))
}

fn initial_configuration(spec: &ExperimentSpec, n: usize, dim: usize, seed: u64) -> Result<Configuration<f64>, RunError> {
    let r = spec.f64("flow.init_radius")?;
    match (spec.raw("flow.init"), dim) {
        ("disk", 1) => Ok(Configuration::new(1, (0..n).map(|i| r * (2.0 * (i as f64 + 0.5) / n as f64 - 1.0)).collect())?),
        ("disk", 2) => Ok(Configuration::sunflower(n, r)?),
        ("disk", _) => Err(spec.invalid("flow.init", "disk initial data exists for d = 1, 2; use gaussian").into()),
        ("gaussian", _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Configuration::new(dim, (0..n * dim).map(|_| r * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())?)
        }
        (other, _) => Err(spec.invalid("flow.init", format!("unknown initial data '{other}'")).into()),
    }
}

fn flow(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let (kernel, potential) = model(spec)?;
    let seed = spec.u64("run.seed")?;
    let n = spec.usize("flow.n")?;
    let dt = spec.f64("flow.dt")?;
    let t_end = spec.f64("flow.t_end")?;
    let options = IntegrationOptions {
        stride: spec.usize("flow.stride")?,
        collision_guard: spec.opt_f64("flow.collision_guard")?,
        max_halvings: spec.usize("flow.max_halvings")?,
    };
    let scheme = match spec.raw("flow.scheme") {
        "euler" => Scheme::Euler,
        "rk4" => Scheme::Rk4,
        "verlet" => Scheme::Verlet,
        other => return Err(spec.invalid("flow.scheme", format!("unknown scheme '{other}'")).into()),
    };
    let start = initial_configuration(spec, n, kernel.dim(), seed.wrapping_add(0x5eed))?;
    let law = spec.raw("flow.law");
    let deterministic = match law {
        "gradient" => Some(DeterministicLaw::GradientFlow),
        "conservative" => Some(DeterministicLaw::Conservative),
        "newton" => Some(DeterministicLaw::Newton),
        _ => None,
    };
    let traj = match deterministic {
        Some(l) => {
            let start = if l == DeterministicLaw::Newton { start.clone().with_velocities(vec![0.0; n * kernel.dim()])? } else { start };
            evolve_deterministic(&start, &kernel, &potential, l, dt, t_end, scheme, &options)?
        }
        None => {
            let l = match law {
                "overdamped" => StochasticLaw::Overdamped,
                "conservative_noise" => StochasticLaw::ConservativeNoise,
                "kinetic" => StochasticLaw::Kinetic { friction: spec.f64("flow.friction")? },
                other => return Err(spec.invalid("flow.law", format!("unknown law '{other}'")).into()),
            };
            let start = if matches!(l, StochasticLaw::Kinetic { .. }) { start.clone().with_velocities(vec![0.0; n * kernel.dim()])? } else { start };
            evolve_stochastic(&start, &kernel, &potential, l, spec.f64("flow.beta")?, dt, t_end, seed, &options)?
        }
    };
    out.write("trajectory.csv", &traj.to_csv())?;
    out.write("energy.csv", &traj.energy_csv())?;
    let mut rows = vec![
        ("law", law.to_string()),
        ("steps", traj.energies.len().saturating_sub(1).to_string()),
        ("halved_steps", traj.halved_steps.to_string()),
        ("max_energy_deviation", num(traj.max_energy_deviation())),
        ("energy_slope", num(traj.energy_slope())),
    ];
    let cells = spec.usize("pde.cells")?;
    if cells > 0 {
        if kernel.family() != KernelFamily::Log2 || !potential.is_radial() {
            return Err(spec.invalid("pde.cells", "the radial solver needs the 2-d log kernel and a radial potential").into());
        }
        let r0 = spec.f64("pde.initial_radius")?;
        let options = MeanFieldOptions { cfl: spec.f64("pde.cfl")?, record_every: (t_end / 20.0).max(dt) };
        let rt = meanfield_radial_solve(
            spec.f64("pde.r_max")?,
            cells,
            |r| if r <= r0 { 1.0 } else { 0.0 },
            &potential,
            spec.opt_f64("pde.beta")?,
            dt,
            t_end,
            &options,
        )?;
        let mut csv = String::from("t,effective_radius,patch_radius,mass\n");
        for (k, &t) in rt.times.iter().enumerate() {
            let patch = if potential.is_zero() { patch_reference(r0, t)? } else { f64::NAN };
            let _ = writeln!(csv, "{},{},{},{}", num(t), num(rt.effective_radius(k)), num(patch), num(rt.mass(k)));
        }
        out.write("radial.csv", &csv)?;
        let mut prof = String::from("r");
        for t in &rt.times {
            let _ = write!(prof, ",t={}", num(*t));
        }
        prof.push('\n');
        for (i, r) in rt.centers().iter().enumerate() {
            prof.push_str(&num(*r));
            for d in &rt.densities {
                let _ = write!(prof, ",{}", num(d[i]));
            }
            prof.push('\n');
        }
        out.write("radial_profiles.csv", &prof)?;
        rows.push(("pde_cfl_reductions", rt.cfl_reductions.to_string()));
        rows.push(("pde_max_mass_drift", num(rt.max_mass_drift)));
    }
    out.write("report.txt", &kv(&rows))
}

fn gibbs_params(spec: &ExperimentSpec, kernel: InteractionKernel, potential: ExternalPotential) -> Result<RunParameters, RunError> {
    let mut p = RunParameters::new(kernel, potential, spec.usize("gibbs.n")?, spec.f64("gibbs.beta")?);
    p.beta_scaling = BetaScaling::parse(spec.raw("gibbs.beta_scaling"))?;
    p.seed = spec.u64("run.seed")?;
    p.sweeps = spec.usize("gibbs.sweeps")?;
    p.burn_in = spec.usize("gibbs.burn_in")?;
    p.stride = spec.usize("gibbs.stride")?;
    p.box_half = spec.opt_f64("gibbs.box_half")?;
    p.target_acceptance = spec.f64("gibbs.target_acceptance")?;
    p.validate()?;
    Ok(p)
}

fn chains(spec: &ExperimentSpec) -> Result<Vec<SampleSet>, RunError> {
    let (kernel, potential) = model(spec)?;
    let base = gibbs_params(spec, kernel, potential)?;
    let count = spec.usize("gibbs.chains")?.max(1);
    let params: Vec<RunParameters> = (0..count as u64).map(|k| RunParameters { seed: base.seed.wrapping_add(k), ..base.clone() }).collect();
    Ok(run_chains(&params)?)
}

fn write_chain(out: &mut Out, k: usize, s: &SampleSet) -> Result<(), RunError> {
    let dir = format!("chain_{k:03}");
    out.write(&format!("{dir}/configurations.csv"), &s.configurations_csv())?;
    out.write(&format!("{dir}/energy.csv"), &s.energy_csv())?;
    let mut meta = serde_json::Map::new();
    for (key, value) in s.metadata() {
        meta.insert(key, serde_json::Value::String(value));
    }
    let prod = &s.acceptance[s.params.burn_in..];
    let acc = prod.iter().sum::<f64>() / prod.len().max(1) as f64;
    meta.insert("production_acceptance".into(), serde_json::Value::String(num(acc)));
    meta.insert("snapshots".into(), serde_json::Value::String(s.snapshots.len().to_string()));
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(meta)).expect("string map serializes") + "\n";
    out.write(&format!("{dir}/meta.json"), &text)
}

fn sample(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    for (k, s) in chains(spec)?.iter().enumerate() {
        write_chain(out, k, s)?;
    }
    Ok(())
}

fn minimize(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let (kernel, potential) = model(spec)?;
    let n = spec.usize("anneal.n")?;
    let schedule = AnnealSchedule {
        beta_start: spec.f64("anneal.beta_start")?,
        beta_end: spec.f64("anneal.beta_end")?,
        stages: spec.usize("anneal.stages")?,
        sweeps_per_stage: spec.usize("anneal.sweeps_per_stage")?,
        gradient_tol: spec.f64("anneal.gradient_tol")?,
        max_descent_iterations: spec.usize("anneal.max_descent_iterations")?,
    };
    let r = anneal_minimize(&kernel, &potential, n, &schedule, spec.u64("run.seed")?)?;
    let d = r.config.dim();
    let mut csv: String = (0..d).map(|a| format!("x{a}")).collect::<Vec<_>>().join(",") + "\n";
    for p in r.config.points() {
        csv.push_str(&p.iter().map(|x| num(*x)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    out.write("minimizer.csv", &csv)?;
    let nn = (n * n) as f64;
    let mut rows = vec![
        ("n", n.to_string()),
        ("energy", num(r.energy)),
        ("energy_over_n2", num(r.energy / nn)),
        ("gradient_norm", num(r.gradient_norm)),
        ("converged", r.converged.to_string()),
        ("descent_iterations", r.descent_iterations.to_string()),
    ];
    if let Some(reference) = analytic_reference(&kernel, &potential) {
        rows.push(("mean_field_energy", num(reference.energy())));
        rows.push(("relative_gap", num(r.energy / nn / reference.energy() - 1.0)));
    }
    out.write("report.txt", &kv(&rows))
}

fn lattice(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let s = spec.f64("lattice.s")?;
    let (gx, gy) = (spec.usize("lattice.grid_x")?, spec.usize("lattice.grid_y")?);
    let y_max = spec.f64("lattice.y_max")?;
    let y_min = 3f64.sqrt() / 2.0;
    if gx < 2 || gy < 2 || !(y_max > y_min) {
        return Err(spec.invalid("lattice.y_max", "need at least 2 samples per axis and y_max > sqrt(3)/2").into());
    }
    let mut csv = String::from("tau_x,tau_y,zeta\n");
    for j in 0..gy {
        let y = y_min + (y_max - y_min) * j as f64 / (gy - 1) as f64;
        for i in 0..gx {
            let x = -0.5 + i as f64 / (gx - 1) as f64;
            // only the fundamental domain |tau| >= 1
            if x * x + y * y < 1.0 {
                continue;
            }
            let z = epstein_zeta(Lattice2D::new(x, y)?, s)?;
            let _ = writeln!(csv, "{},{},{}", num(x), num(y), num(z));
        }
    }
    out.write("zeta_grid.csv", &csv)?;
    let search = ZetaSearch {
        start: Lattice2D::new(spec.f64("lattice.start_x")?, spec.f64("lattice.start_y")?)?,
        max_iter: spec.usize("lattice.max_iter")?,
        tol: spec.f64("lattice.tol")?,
        ..ZetaSearch::default()
    };
    let m = minimize_zeta(s, &search)?;
    let mut trace = String::from("tau_x,tau_y,zeta\n");
    for (x, y, z) in &m.trace {
        let _ = writeln!(trace, "{},{},{}", num(*x), num(*y), num(*z));
    }
    out.write("descent.csv", &trace)?;
    let rows = [
        ("s", num(s)),
        ("tau_x", num(m.tau.x)),
        ("tau_y", num(m.tau.y)),
        ("zeta_min", num(m.value)),
        ("iterations", m.iterations.to_string()),
        ("zeta_triangular", num(epstein_zeta(Lattice2D::triangular(), s)?)),
        ("zeta_square", num(epstein_zeta(Lattice2D::square(), s)?)),
    ];
    out.write("report.txt", &kv(&rows))
}

fn fluct(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let (kernel, potential) = model(spec)?;
    let Some(reference) = analytic_reference(&kernel, &potential).filter(|r| r.dim() == 2) else {
        return Err(Error::Unsupported("fluct needs the 2-d log kernel with quadratic confinement".into()).into());
    };
    let sets = chains(spec)?;
    let f = TestFunction::bump(vec![0.0, 0.0], spec.f64("fluct.bump_radius")?, spec.usize("fluct.bump_power")? as u32)?;
    let beta = sets[0].effective_beta;
    let mut merged = sets[0].clone();
    for s in &sets[1..] {
        merged.snapshots.extend(s.snapshots.iter().cloned());
    }
    let report = clt_harness(&merged, &f, reference.as_ref(), beta)?;
    out.write("clt.txt", &report.to_text())?;
    let mut values = String::from("sample,fluctuation\n");
    for (i, v) in report.values.iter().enumerate() {
        let _ = writeln!(values, "{i},{}", num(*v));
    }
    out.write("fluctuations.csv", &values)?;
    let origin = [0.0, 0.0];
    let nv = number_variance(&merged.snapshots, reference.as_ref(), &origin, &spec.list("fluct.radii")?)?;
    out.write("number_variance.csv", &nv.to_csv())?;
    let bins = spec.usize("fluct.bins")?;
    let r_max = spec.f64("fluct.r_max")?;
    let edges: Vec<f64> = (0..=bins).map(|i| r_max * i as f64 / bins as f64).collect();
    let pc = pair_correlation(&merged.snapshots, reference.as_ref(), &origin, spec.f64("fluct.window")?, &edges)?;
    out.write("pair_correlation.csv", &pc.to_csv())?;
    let (slope, err) = nv.growth_exponent().unwrap_or((f64::NAN, f64::NAN));
    let rows = [
        ("number_variance_exponent", num(slope)),
        ("number_variance_exponent_std_error", num(err)),
        ("pair_correlation_empty_bins", format!("{:?}", pc.empty_bins)),
    ];
    out.write("summary.txt", &kv(&rows))
}

fn splitdiag(spec: &ExperimentSpec, out: &mut Out) -> Result<(), RunError> {
    let (kernel, potential) = model(spec)?;
    let analytic = analytic_reference(&kernel, &potential);
    let solved = match analytic {
        Some(_) => None,
        None => Some(solve_reference(spec, &kernel, &potential)?),
    };
    let reference: &dyn MeanFieldReference = match (&analytic, &solved) {
        (Some(r), _) => r.as_ref(),
        (None, Some(s)) => s,
        (None, None) => unreachable!(),
    };
    let d = kernel.dim();
    let n = spec.usize("split.n")?;
    let support = match &solved {
        Some(s) => s.support_radius(),
        None => RunParameters::new(kernel, potential.clone(), n, 1.0).support_radius(),
    };
    let radius = spec.f64("split.spread")? * support;
    let eta = match spec.raw("split.eta") {
        "none" => None,
        _ => Some(spec.opt_f64("split.eta")?.unwrap_or_else(|| default_eta(n, d))),
    };
    let electric = eta.is_some() && matches!(kernel.family(), KernelFamily::Log2 | KernelFamily::Coulomb);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.u64("run.seed")?);
    let mut csv = String::from("config,hamiltonian,leading,cross,next_order,relative_error,electric\n");
    for c in 0..spec.usize("split.configs")? {
        let mut pts = Vec::with_capacity(n * d);
        for _ in 0..n {
            // uniform in the ball by rejection from the cube
            loop {
                let p: Vec<f64> = (0..d).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
                if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                    pts.extend(p);
                    break;
                }
            }
        }
        let config = Configuration::new(d, pts)?;
        let h = hamiltonian(&config, &kernel, &potential)?;
        let split = split_energy(&config, &kernel, &potential, reference)?;
        let te = match (electric, eta) {
            (true, Some(eta)) => {
                let spacing = spec.opt_f64("split.spacing")?.unwrap_or(eta / 4.0);
                let side = spec.opt_f64("split.box_side")?.unwrap_or(4.0 * radius);
                num(truncated_electric_energy(&config, &kernel, reference, eta, &SpectralBox { side, spacing })?.value)
            }
            _ => "nan".into(),
        };
        let _ = writeln!(
            csv,
            "{c},{},{},{},{},{},{te}",
            num(h),
            num(split.leading),
            num(split.cross),
            num(split.next_order),
            num((split.total() - h).abs() / h.abs().max(f64::MIN_POSITIVE))
        );
    }
    out.write("split.csv", &csv)?;
    let rows = [
        ("reference", if analytic.is_some() { "closed form".to_string() } else { "grid solver".to_string() }),
        ("reference_energy", num(reference.energy())),
        ("spread_radius", num(radius)),
        ("eta", eta.map_or("none".into(), num)),
    ];
    out.write("report.txt", &kv(&rows))
}
