use clap::Parser;

use gru4rec::cli::{run, Cli, ExitCode};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(_) => ExitCode::Ok,
        Err(e) => {
            for m in &e.messages {
                eprintln!("error: {m}");
            }
            e.code
        }
    };
    std::process::exit(code as i32);
}
