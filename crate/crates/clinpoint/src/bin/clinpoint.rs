use clap::Parser;

fn main() {
    let cli = clinpoint::cli::Cli::parse();
    match clinpoint::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
