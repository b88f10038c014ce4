use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use crate::Outcome;

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SPECS: [(&str, &str); 7] = [
    ("equilibrium", "model.kernel = log1\nmodel.dim = 1\ngrid.cells = 128\n"),
    ("flow", "flow.law = overdamped\nflow.n = 20\nflow.beta = 4\nflow.t_end = 0.2\nflow.scheme = euler\npde.cells = 60\n"),
    ("sample", "gibbs.n = 16\ngibbs.sweeps = 400\ngibbs.burn_in = 100\ngibbs.chains = 3\n"),
    ("minimize", "anneal.n = 20\nanneal.stages = 5\n"),
    ("lattice", "lattice.grid_x = 5\nlattice.grid_y = 5\n"),
    ("fluct", "gibbs.n = 32\ngibbs.sweeps = 600\ngibbs.burn_in = 100\ngibbs.chains = 2\n"),
    ("splitdiag", "grid.cells = 64\nsplit.n = 20\nsplit.configs = 2\n"),
];

pub fn c15_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut files = 0;
    for (command, body) in SPECS {
        let mut trees = Vec::new();
        for threads in ["1", "3"] {
            let out = tmp.path().join(format!("{command}-{threads}"));
            let spec = tmp.path().join(format!("{command}.spec"));
            fs::write(&spec, format!("run.command = {command}\nrun.seed = 5\nrun.output = {}\n{body}", out.display())).unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_coulomb-lab"))
                .args(["run", &spec.display().to_string()])
                .env("COULOMB_LAB_THREADS", threads)
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{command} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
            }
            // the output directory name differs between the runs; compare contents only
            let mut tree = read_tree(&out);
            if let Some(r) = tree.get_mut("spec.resolved") {
                *r = String::from_utf8_lossy(r).replace(&out.display().to_string(), "OUT").into_bytes();
            }
            trees.push(tree);
        }
        files += trees[0].len();
        if trees[0] != trees[1] {
            let differing: Vec<&String> =
                trees[0].keys().filter(|k| trees[1].get(*k) != trees[0].get(*k)).collect();
            failures.push(format!("{command} outputs differ: {differing:?}"));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{} commands, {files} files byte-identical across thread counts", SPECS.len())
    } else {
        failures.join("; ")
    };
    Outcome::new(pass, detail)
}
