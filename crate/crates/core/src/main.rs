fn main() {
    std::process::exit(gsr_fns::cli::run(std::env::args_os()));
}
