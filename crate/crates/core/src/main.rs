fn main() {
    std::process::exit(uqbench::cli::run(std::env::args_os()));
}
