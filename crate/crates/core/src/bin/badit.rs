fn main() {
    std::process::exit(badit::cli::main_with_args(std::env::args_os()));
}
