fn main() {
    std::process::exit(ddl_cli::main_with_args(std::env::args_os()));
}
