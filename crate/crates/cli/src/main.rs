use clap::Parser;

use imglsh_cli::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            print!("{output}");
            if !output.ends_with('\n') {
                println!();
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                imglsh::Error::Format(_) | imglsh::Error::DimensionMismatch { .. } => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}
