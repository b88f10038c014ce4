mod commands;
mod spec;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::commands::RunError;
use crate::spec::{help_text, Command, ExperimentSpec};

const THREADS_ENV: &str = "COULOMB_LAB_THREADS";

fn usage_exit(message: &str) -> ExitCode {
    eprintln!("error: {message}\n");
    eprint!("{}", help_text());
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (command, path) = match args.as_slice() {
        [] => {
            print!("{}", help_text());
            return ExitCode::SUCCESS;
        }
        [h] if h == "help" || h == "--help" || h == "-h" => {
            print!("{}", help_text());
            return ExitCode::SUCCESS;
        }
        [run, path] if run == "run" => (None, path),
        [name, path] => match Command::parse(name) {
            Some(c) => (Some(c), path),
            None => return usage_exit(&format!("unknown command '{name}'")),
        },
        [name] => {
            return match Command::parse(name) {
                Some(_) => usage_exit(&format!("command '{name}' needs a spec file")),
                None => usage_exit(&format!("unknown command '{name}'")),
            }
        }
        _ => return usage_exit("too many arguments"),
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage_exit(&format!("cannot read spec file '{path}': {e}")),
    };
    let spec = match ExperimentSpec::parse(&text, command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error in {path}: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&spec) {
        Ok(dir) => {
            println!("{} finished; outputs in {}", spec.command, dir.display());
            ExitCode::SUCCESS
        }
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn thread_count(spec: &ExperimentSpec) -> Result<usize, RunError> {
    let t = spec.usize("run.threads")?;
    if t > 0 {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| spec.invalid("run.threads", format!("{THREADS_ENV}='{v}' is not a thread count")).into()),
        Err(_) => Ok(0),
    }
}

fn execute(spec: &ExperimentSpec) -> Result<PathBuf, (u8, String)> {
    let dir = PathBuf::from(spec.raw("run.output"));
    fs::create_dir_all(&dir).map_err(|e| (1, format!("cannot create output directory {}: {e}", dir.display())))?;
    let started = Instant::now();
    let outcome = (|| {
        let reproducible = spec.bool("run.reproducible")?;
        let threads = thread_count(spec)?;
        fs::write(dir.join("spec.resolved"), spec.resolved())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| RunError::Io(std::io::Error::other(e.to_string())))?;
        let files = pool.install(|| commands::run(spec, &dir))?;
        Ok::<_, RunError>((reproducible, pool.current_num_threads(), files))
    })();
    let reproducible = spec.bool("run.reproducible").unwrap_or(true);
    let mut m = Map::new();
    m.insert("program".into(), json!("coulomb-lab"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(spec.command.name()));
    m.insert("seed".into(), json!(spec.raw("run.seed")));
    m.insert("reproducible".into(), json!(reproducible));
    m.insert("spec".into(), json!("spec.resolved"));
    let result = match outcome {
        Ok((_, threads, files)) => {
            // thread count does not affect results, so it is only recorded outside reproducible mode
            if !reproducible {
                m.insert("threads".into(), json!(threads));
            }
            m.insert("status".into(), json!("ok"));
            m.insert("outputs".into(), Value::Array(files.into_iter().map(Value::String).collect()));
            Ok(dir.clone())
        }
        Err(e) => {
            m.insert("status".into(), json!("error"));
            m.insert("exit_code".into(), json!(e.exit_code()));
            m.insert("error".into(), json!(e.to_string()));
            Err((e.exit_code() as u8, e.to_string()))
        }
    };
    if !reproducible {
        m.insert("wall_time_seconds".into(), json!(started.elapsed().as_secs_f64()));
    }
    write_manifest(&dir, &m).map_err(|e| (1, format!("cannot write manifest: {e}")))?;
    result
}

fn write_manifest(dir: &Path, m: &Map<String, Value>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(&Value::Object(m.clone())).expect("manifest serializes") + "\n";
    fs::write(dir.join("manifest.json"), text)
}
