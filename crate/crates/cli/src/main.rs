fn main() {
    std::process::exit(phibp_cli::dispatch(std::env::args_os()));
}
