fn main() {
    std::process::exit(nlsimons::cli::main_with_args(std::env::args_os()));
}
