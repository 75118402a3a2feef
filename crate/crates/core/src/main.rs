fn main() {
    std::process::exit(cleancausal::cli::parse_and_dispatch(std::env::args_os()));
}
