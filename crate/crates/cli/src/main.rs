fn main() {
    std::process::exit(m2vscope_cli::main_with_args(std::env::args_os()));
}
