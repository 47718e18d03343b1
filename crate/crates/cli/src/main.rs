fn main() {
    std::process::exit(sflc_cli::app::main_with_args(std::env::args_os()));
}
