fn main() {
    ual_core::cli::init_logging();
    std::process::exit(ual_core::cli::run(std::env::args_os()));
}
