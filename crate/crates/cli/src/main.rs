use clap::Parser;

fn main() {
    let cli = epnkit_cli::Cli::parse();
    let code = match epnkit_cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
