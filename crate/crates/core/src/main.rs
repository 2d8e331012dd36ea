use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use szego_rh::config::{examples, RunConfig};
use szego_rh::report::{run, write_csv};
use szego_rh::Error;

const THREADS_VAR: &str = "SZEGO_RH_THREADS";

#[derive(Parser)]
#[command(name = "szego-rh", version, about = "Riemann-Hilbert solutions from Szego kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a JSON config.
    Run {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scan table path (default: the config path with a .csv extension).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the bundled example configs into a directory.
    Examples {
        dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR}: expected a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("{THREADS_VAR}: {e}"))
}

fn write_examples(dir: &Path, force: bool) -> Result<(), Error> {
    let files = examples();
    if !force {
        if let Some((name, _)) = files.iter().find(|(name, _)| dir.join(name).exists()) {
            return Err(Error::Io(format!("{} exists (use --force to overwrite)", dir.join(name).display())));
        }
    }
    fs::create_dir_all(dir)?;
    for (name, config) in files {
        fs::write(dir.join(name), config.to_json() + "\n")?;
    }
    Ok(())
}

fn run_file(config: &Path, out: Option<&Path>, csv: Option<&Path>) -> Result<bool, String> {
    let text = fs::read_to_string(config).map_err(|e| format!("{}: {e}", config.display()))?;
    let parsed = RunConfig::from_json(&text).map_err(|e| format!("{}: {e}", config.display()))?;
    let outcome = run(&parsed).map_err(|e| e.to_string())?;
    let json = outcome.report.to_json() + "\n";
    match out {
        Some(p) => fs::write(p, json).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{json}"),
    }
    if let Some(rows) = &outcome.rows {
        let path = csv.map(Path::to_path_buf).unwrap_or_else(|| config.with_extension("csv"));
        let file = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        write_csv(rows, std::io::BufWriter::new(file)).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    for c in outcome.report.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {} = {:.3e} (tolerance {:.1e})", c.name, c.value, c.tolerance);
    }
    Ok(outcome.report.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, out, csv } => run_file(&config, out.as_deref(), csv.as_deref()),
        Command::Examples { dir, force } => write_examples(&dir, force).map(|_| true).map_err(|e| e.to_string()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
