fn main() {
    let code = coprune::cli::cli_main(std::env::args_os());
    std::process::exit(code);
}
