fn main() {
    std::process::exit(causal_lab::cli::run(std::env::args_os()));
}
