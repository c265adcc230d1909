fn main() {
    std::process::exit(texsyn::cli::run(std::env::args_os()));
}
