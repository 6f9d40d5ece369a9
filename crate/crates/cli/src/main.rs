use clap::Parser;
use gmvae_cli::{run, Args};

fn main() {
    let args = Args::parse();
    let stdout = std::io::stdout();
    if let Err(e) = run(&args.command, &mut stdout.lock()) {
        eprintln!("gmvae: {e}");
        std::process::exit(e.exit_code());
    }
}
