use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use viewagg::cli::{error_json, exit_code, run, Cli};

const USAGE_EXIT: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim().to_string(), USAGE_EXIT.into()));
            return ExitCode::from(USAGE_EXIT);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_json("usage", format!("--threads: {e}"), USAGE_EXIT.into()));
            return ExitCode::from(USAGE_EXIT);
        }
    }
    match run(&cli) {
        Ok(Some(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), e.to_string(), code));
            ExitCode::from(code as u8)
        }
    }
}
