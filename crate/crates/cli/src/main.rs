fn main() {
    std::process::exit(pivotfit_cli::run_cli(std::env::args_os()));
}
