use clap::Parser;

fn main() {
    let cli = tnsketch_cli::Cli::parse();
    match tnsketch_cli::run(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(tnsketch_cli::exit_code(&e));
        }
    }
}
