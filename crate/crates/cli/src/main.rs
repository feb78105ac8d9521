fn main() {
    std::process::exit(longtail_cli::dispatch(std::env::args_os()));
}
