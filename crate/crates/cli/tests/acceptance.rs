//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p coulomb-lab --test acceptance` runs everything; numeric arguments
//! (`-- 4 7`) select criteria.

#[path = "acceptance/cli.rs"]
mod cli;
#[path = "acceptance/dynamics.rs"]
mod dynamics;
#[path = "acceptance/sampling.rs"]
mod sampling;
#[path = "acceptance/statics.rs"]
mod statics;

use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 15] = [
    (1, "Gibbs density at moderate N matches the circle law", sampling::c01_circle_law),
    (2, "1-d equilibrium solver against the semicircle", statics::c02_semicircle),
    (3, "energy splitting identity", statics::c03_splitting),
    (4, "truncated energy converges as eta shrinks", statics::c04_truncation),
    (5, "gradient flow spreads like the mean-field patch", dynamics::c05_patch),
    (6, "conservative and Newton dynamics conserve energy", dynamics::c06_conservation),
    (7, "noisy dynamics sample the Gibbs measure", dynamics::c07_invariant_law),
    (8, "annealed minimizers and the next-order term", sampling::c08_minimizers),
    (9, "triangular lattice minimizes the Epstein zeta", statics::c09_zeta),
    (10, "equally spaced points minimize the 1-d torus energy", statics::c10_circle),
    (11, "triangular beats square for the 2-d torus energy", statics::c11_torus),
    (12, "linear statistics are asymptotically Gaussian", sampling::c12_clt),
    (13, "number variance grows slower than Poisson", sampling::c13_number_variance),
    (14, "free energy by thermodynamic integration", sampling::c14_free_energy),
    (15, "reproducible command-line runs", cli::c15_determinism),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {k:>2} {verdict} {name}: {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(k);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
