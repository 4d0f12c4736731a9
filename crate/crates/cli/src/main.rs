fn main() {
    std::process::exit(avfuse_cli::main_with_args(std::env::args_os()));
}
