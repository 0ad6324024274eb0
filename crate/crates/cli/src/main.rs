fn main() {
    std::process::exit(rfinterp_cli::main_with(std::env::args_os()));
}
