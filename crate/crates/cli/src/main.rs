fn main() {
    std::process::exit(flr_cli::main_with_args(std::env::args_os()));
}
