fn main() {
    std::process::exit(vspan_core::cli::run(std::env::args_os()));
}
