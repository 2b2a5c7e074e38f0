fn main() {
    std::process::exit(meta_semi::cli::main_with_args(std::env::args_os()));
}
