fn main() {
    std::process::exit(dvs_core::cli::main_with_args(std::env::args_os()));
}
