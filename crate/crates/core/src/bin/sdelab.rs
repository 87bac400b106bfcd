fn main() {
    std::process::exit(sdelab::harness::cli::cli_main(std::env::args_os()));
}
