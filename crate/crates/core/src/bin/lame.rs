fn main() {
    std::process::exit(lame_core::cli::main_with_args(std::env::args_os()));
}
