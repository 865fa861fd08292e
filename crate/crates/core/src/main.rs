use kband::cli;

fn main() {
    let args = match cli::parse_args(std::env::args_os()) {
        Ok(args) => args,
        Err(e) => e.exit(),
    };
    std::process::exit(cli::run(&args));
}
