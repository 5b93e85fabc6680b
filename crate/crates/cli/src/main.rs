mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use output::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let report = pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Test(a) => commands::test(a),
        Command::Shrink(a) => commands::shrink(a),
        Command::Path(a) => commands::path(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::MrmeSweep(a) => commands::mrme_sweep(a),
        Command::RiskCurve(a) => commands::risk_curve_cmd(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Schema(a) => commands::schema(a),
    })?;
    output::emit(&report, cli.format, cli.out.as_deref())
}
