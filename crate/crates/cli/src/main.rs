fn main() {
    std::process::exit(monoe_cli::run(std::env::args_os()));
}
