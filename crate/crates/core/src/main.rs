fn main() {
    corpusforge::cli::init_logging();
    std::process::exit(corpusforge::cli::main_with_args(std::env::args_os()));
}
