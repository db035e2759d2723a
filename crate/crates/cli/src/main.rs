fn main() {
    std::process::exit(adacrit_cli::cli_main(std::env::args_os()));
}
