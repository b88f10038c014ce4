//! Flat `section.key = value` experiment files with a strict per-command schema.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Equilibrium,
    Flow,
    Sample,
    Minimize,
    Lattice,
    Fluct,
    Splitdiag,
}

pub const COMMANDS: [Command; 7] =
    [Command::Equilibrium, Command::Flow, Command::Sample, Command::Minimize, Command::Lattice, Command::Fluct, Command::Splitdiag];

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Equilibrium => "equilibrium",
            Self::Flow => "flow",
            Self::Sample => "sample",
            Self::Minimize => "minimize",
            Self::Lattice => "lattice",
            Self::Fluct => "fluct",
            Self::Splitdiag => "splitdiag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        COMMANDS.into_iter().find(|c| c.name() == s)
    }

    pub fn summary(self) -> &'static str {
        match self {
            Self::Equilibrium => "equilibrium measure on a grid, Euler-Lagrange residuals, optional thermal measure",
            Self::Flow => "particle dynamics (deterministic or stochastic) and the radial mean-field solver",
            Self::Sample => "Metropolis sampling of the Gibbs measure",
            Self::Minimize => "annealed minimization of the energy",
            Self::Lattice => "Epstein zeta over the fundamental domain and its minimizer",
            Self::Fluct => "Gibbs samples plus linear-statistic, number-variance and pair-correlation reports",
            Self::Splitdiag => "energy splitting diagnostics on random configurations",
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            Self::Equilibrium => &["run", "model", "grid", "solver"],
            Self::Flow => &["run", "model", "flow", "pde"],
            Self::Sample => &["run", "model", "gibbs"],
            Self::Minimize => &["run", "model", "anneal"],
            Self::Lattice => &["run", "lattice"],
            Self::Fluct => &["run", "model", "gibbs", "fluct"],
            Self::Splitdiag => &["run", "model", "grid", "solver", "split"],
        }
    }

    /// Every key accepted by this command.
    pub fn schema(self) -> Vec<&'static KeySpec> {
        KEYS.iter().filter(|k| self.sections().contains(&k.section())).collect()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A schema entry. `default = None` marks a required key.
#[derive(Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

impl KeySpec {
    fn section(&self) -> &'static str {
        self.key.split('.').next().unwrap_or("")
    }
}

const fn k(key: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, default: Some(default), help }
}

pub static KEYS: &[KeySpec] = &[
    KeySpec { key: "run.command", default: None, help: "equilibrium | flow | sample | minimize | lattice | fluct | splitdiag" },
    k("run.seed", "1", "base seed of every random stream"),
    k("run.output", "coulomb-lab-out", "output directory (created if missing)"),
    k("run.reproducible", "true", "byte-identical outputs; the manifest then omits wall time"),
    k("run.threads", "0", "worker threads; 0 defers to COULOMB_LAB_THREADS, then to all cores"),
    k("model.kernel", "log2", "log1 | log2 | coulomb | riesz:<s>"),
    k("model.dim", "2", "space dimension"),
    k("model.potential", "quadratic:1", "zero | quadratic:<a> | radial:<c0>,<c1>,..."),
    k("grid.half_width", "1.5", "grid covers [-w, w]^d"),
    k("grid.cells", "256", "cells per axis"),
    k("solver.tol", "1e-9", "duality-gap tolerance of the equilibrium solver"),
    k("solver.max_iter", "20000", "iteration cap of the equilibrium solver"),
    k("solver.thermal_beta", "none", "also solve the thermal fixed point at this beta"),
    k("flow.law", "gradient", "gradient | conservative | newton | overdamped | conservative_noise | kinetic"),
    k("flow.n", "100", "number of particles"),
    k("flow.init", "disk", "disk (deterministic fill of the ball) | gaussian"),
    k("flow.init_radius", "1", "radius of the initial disk, or standard deviation of the gaussian"),
    k("flow.dt", "1e-3", "time step"),
    k("flow.t_end", "1", "final time"),
    k("flow.scheme", "rk4", "euler | rk4 | verlet (verlet only with newton)"),
    k("flow.beta", "inf", "noise level of the stochastic laws; inf means no noise"),
    k("flow.friction", "0", "friction of the kinetic law"),
    k("flow.stride", "10", "record every stride-th step"),
    k("flow.collision_guard", "auto", "minimal pair distance; auto = 10 eps max(extent, 1)"),
    k("flow.max_halvings", "4", "step halvings allowed before a collision error"),
    k("pde.cells", "0", "radial mean-field solver cells; 0 disables it (needs d = 2, log2, radial V)"),
    k("pde.r_max", "3", "outer radius of the radial solver"),
    k("pde.initial_radius", "1", "radius of the uniform initial patch"),
    k("pde.beta", "none", "diffusion beta of the mean-field equation; none = no diffusion"),
    k("pde.cfl", "0.9", "CFL safety factor"),
    k("gibbs.n", "100", "number of particles"),
    k("gibbs.beta", "2", "inverse temperature multiplying H_N"),
    k("gibbs.beta_scaling", "fixed", "fixed | high_temperature (beta/N) | next_order (beta N^(2/d - 1))"),
    k("gibbs.sweeps", "1000", "sweeps of N single-site proposals"),
    k("gibbs.burn_in", "200", "sweeps discarded; step-size adaptation only happens here"),
    k("gibbs.stride", "1", "keep every stride-th production sweep"),
    k("gibbs.box_half", "none", "confine every coordinate to [-b, b]"),
    k("gibbs.target_acceptance", "0.35", "acceptance targeted by the burn-in adaptation"),
    k("gibbs.chains", "1", "independent chains with seeds seed, seed+1, ..."),
    k("anneal.n", "50", "number of particles"),
    k("anneal.beta_start", "1", "first annealing beta"),
    k("anneal.beta_end", "1000", "last annealing beta"),
    k("anneal.stages", "30", "geometric beta stages"),
    k("anneal.sweeps_per_stage", "20", "Metropolis sweeps per stage"),
    k("anneal.gradient_tol", "1e-8", "gradient norm ending the final descent"),
    k("anneal.max_descent_iterations", "50000", "iteration cap of the final descent"),
    k("lattice.s", "3", "Epstein zeta exponent"),
    k("lattice.grid_x", "41", "tau_x samples on [-1/2, 1/2]"),
    k("lattice.grid_y", "41", "tau_y samples on [sqrt(3)/2, y_max]"),
    k("lattice.y_max", "2", "upper end of the tau_y range"),
    k("lattice.start_x", "0.1", "descent start, real part"),
    k("lattice.start_y", "1.3", "descent start, imaginary part"),
    k("lattice.max_iter", "500", "descent iteration cap"),
    k("lattice.tol", "1e-9", "descent stops when tau moves less than this"),
    k("fluct.bump_radius", "0.5", "radius of the test function (1 - |x/r|^2)^k"),
    k("fluct.bump_power", "4", "power k >= 3 of the test function"),
    k("fluct.radii", "0.5,1,1.5,2,2.5,3", "number-variance radii in microscopic units"),
    k("fluct.window", "2", "pair-correlation reference window, microscopic units"),
    k("fluct.r_max", "3", "largest pair-correlation distance"),
    k("fluct.bins", "30", "pair-correlation bins"),
    k("split.n", "100", "points per configuration"),
    k("split.configs", "10", "random configurations"),
    k("split.spread", "1.2", "points uniform in a ball of this multiple of the support radius"),
    k("split.eta", "auto", "truncation radius; auto = 0.3 N^(-1/d), none skips the electric energy"),
    k("split.spacing", "auto", "spectral resolution; auto = eta/4"),
    k("split.box_side", "auto", "spectral box side; auto = 4 times the spread radius"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SpecError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "key '{k}': ")?;
        }
        f.write_str(&self.message)
    }
}

fn err(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> SpecError {
    SpecError { line, key: key.map(str::to_string), message: message.into() }
}

/// A parsed and resolved experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    values: BTreeMap<&'static str, String>,
}

impl ExperimentSpec {
    /// Parse `text`; `command` (from the command line) must agree with `run.command` if both are given.
    pub fn parse(text: &str, command: Option<Command>) -> Result<Self, SpecError> {
        let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(Some(ln), None, format!("expected 'section.key = value', got '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(err(Some(ln), Some(key), "missing value"));
            }
            if !KEYS.iter().any(|s| s.key == key) {
                return Err(err(Some(ln), Some(key), "unknown key"));
            }
            if let Some((first, _)) = raw.get(key) {
                return Err(err(Some(ln), Some(key), format!("duplicate key (first set on line {first})")));
            }
            raw.insert(key.to_string(), (ln, value.to_string()));
        }
        let command = match (raw.get("run.command"), command) {
            (Some((ln, name)), cli) => {
                let c = Command::parse(name).ok_or_else(|| err(Some(*ln), Some("run.command"), format!("unknown command '{name}'")))?;
                if cli.is_some_and(|cli| cli != c) {
                    return Err(err(Some(*ln), Some("run.command"), format!("file says '{c}' but '{}' was requested", cli.unwrap())));
                }
                c
            }
            (None, Some(c)) => c,
            (None, None) => return Err(err(None, Some("run.command"), "required key missing")),
        };
        let schema = command.schema();
        for (key, (ln, _)) in &raw {
            if !schema.iter().any(|s| s.key == key) {
                return Err(err(Some(*ln), Some(key), format!("not a parameter of command '{command}'")));
            }
        }
        let mut values = BTreeMap::new();
        for s in schema {
            let v = match (raw.get(s.key), s.default) {
                (Some((_, v)), _) => v.clone(),
                (None, _) if s.key == "run.command" => command.name().to_string(),
                (None, Some(d)) => d.to_string(),
                (None, None) => return Err(err(None, Some(s.key), "required key missing")),
            };
            values.insert(s.key, v);
        }
        Ok(Self { command, values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} not in the schema of {}", self.command))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, SpecError> {
        self.raw(key).parse().map_err(|_| err(None, Some(key), format!("expected {what}, got '{}'", self.raw(key))))
    }

    pub fn f64(&self, key: &str) -> Result<f64, SpecError> {
        match self.raw(key) {
            "inf" => Ok(f64::INFINITY),
            _ => self.typed(key, "a number"),
        }
    }

    /// `none` or `auto` map to `None`.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, SpecError> {
        match self.raw(key) {
            "none" | "auto" => Ok(None),
            _ => self.f64(key).map(Some),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, SpecError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, SpecError> {
        self.typed(key, "a non-negative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool, SpecError> {
        self.typed(key, "true or false")
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>, SpecError> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| err(None, Some(key), format!("expected a comma-separated list of numbers, got '{}'", self.raw(key)))))
            .collect()
    }

    pub fn invalid(&self, key: &str, message: impl Into<String>) -> SpecError {
        err(None, Some(key), message)
    }

    /// All resolved keys, defaults included, one `key = value` per line.
    pub fn resolved(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Defaults fixed in the library rather than in the spec file.
pub const LIBRARY_DEFAULTS: &[(&str, &str)] = &[
    ("truncation radius eta", "0.3 N^(-1/d)"),
    ("spectral neutrality tolerance", "1e-8"),
    ("equilibrium support threshold", "1e-3 of the maximal density"),
    ("Robin constant", "median of h + V over the support"),
    ("equilibrium singular cell", "analytic mean of g over a cell"),
    ("collision guard", "10 eps max(extent, 1)"),
    ("step halvings before a collision error", "4"),
    ("Metropolis proposals", "single-site gaussian, adapted during burn-in only"),
    ("initial Gibbs configuration", "gaussian with standard deviation half the support radius"),
    ("CLT batch means", "32 batches (at least 30)"),
    ("floating-point output", "17 significant digits, CSV with header row, LF line endings"),
    ("real type", "double precision"),
];

pub fn help_text() -> String {
    let mut s = String::from(
        "coulomb-lab: experiments on Coulomb, log and Riesz gases\n\n\
         usage:\n  coulomb-lab <command> SPEC   run SPEC as <command>\n  coulomb-lab run SPEC         run SPEC (command from run.command)\n  coulomb-lab help             this text\n\n\
         SPEC is a text file of 'section.key = value' lines; '#' starts a comment.\n\
         Unknown or misplaced keys are rejected. Environment: COULOMB_LAB_THREADS sets the default thread count.\n\
         Exit codes: 0 success, 1 runtime error, 2 usage error.\n\ncommands:\n",
    );
    for c in COMMANDS {
        s.push_str(&format!("\n  {:<12} {}\n", c.name(), c.summary()));
        for ks in c.schema() {
            let d = ks.default.unwrap_or("(required unless given on the command line)");
            s.push_str(&format!("    {:<30} default {:<22} {}\n", ks.key, d, ks.help));
        }
    }
    s.push_str("\nlibrary defaults:\n");
    for (k, v) in LIBRARY_DEFAULTS {
        s.push_str(&format!("  {k}: {v}\n"));
    }
    s
}
