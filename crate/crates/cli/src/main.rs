fn main() {
    std::process::exit(parament_cli::main_with_args(std::env::args_os()));
}
