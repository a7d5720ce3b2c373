fn main() {
    std::process::exit(progot_cli::cli_main(std::env::args_os()));
}
