fn main() {
    std::process::exit(simex_cli::main_with_args(std::env::args_os()));
}
