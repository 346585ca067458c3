fn main() {
    std::process::exit(fedtrade_cli::main_with(std::env::args_os()));
}
