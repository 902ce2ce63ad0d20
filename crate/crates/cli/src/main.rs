use clap::Parser;
use dapi2ck_cli::{run, Cli, EXIT_OK};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => {
            if let Some(text) = outcome.text {
                print!("{text}");
            }
            println!("{}", outcome.summary);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code
        }
    };
    std::process::exit(code);
}
