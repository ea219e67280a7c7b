fn main() {
    std::process::exit(pgdro::bench::cli::cli_main(std::env::args_os()));
}
