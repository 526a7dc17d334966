use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use capmom::cli::{parse_config_as, run, MethodSelection, Mode};

#[derive(Parser)]
#[command(
    name = "capmom",
    version,
    about = "Capacitance matrices of multiconductor microstrip lines"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Run description (TOML, lengths in mm).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Sweep method to run.
    #[arg(long, global = true, value_enum, default_value = "both")]
    method: MethodArg,
    /// Exit with status 1 if an audited matrix is not physical.
    #[arg(long, global = true)]
    fail_on_nonphysical: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Single solve on a fixed mesh.
    Solve,
    /// Refine until the matrix settles.
    Converge,
    /// Parameter sweep with Method I and/or Method II.
    Sweep,
    /// Physical-validity audit of a CSV matrix or first row.
    Audit,
    /// Change mask between two sweep points.
    Diffmask,
}

#[derive(ValueEnum, Clone, Copy)]
enum MethodArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mode = match args.command {
        Command::Solve => Mode::Solve,
        Command::Converge => Mode::Converge,
        Command::Sweep => Mode::Sweep,
        Command::Audit => Mode::Audit,
        Command::Diffmask => Mode::Diffmask,
    };
    let Some(path) = args.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let mut config = match parse_config_as(&path, Some(mode)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    config.methods = match args.method {
        MethodArg::One => MethodSelection::One,
        MethodArg::Two => MethodSelection::Two,
        MethodArg::Both => MethodSelection::Both,
    };
    config.fail_on_nonphysical = args.fail_on_nonphysical;
    match run(&config) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!(
                "wrote {} files to {}",
                outcome.files.len(),
                config.out_dir.display()
            );
            ExitCode::from(outcome.exit_code(config.fail_on_nonphysical) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
