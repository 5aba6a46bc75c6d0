use clap::Parser;

use pvc_core::cli::{exit_code, init_logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    let result = init_logging().and_then(|()| run(&cli));
    match result {
        Ok(report) => print!("{report}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
