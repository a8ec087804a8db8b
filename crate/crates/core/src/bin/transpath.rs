fn main() {
    std::process::exit(transpath::harness::cli_dispatch(std::env::args_os()));
}
