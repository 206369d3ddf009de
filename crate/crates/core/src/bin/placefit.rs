fn main() {
    std::process::exit(placefit::cli::dispatch(std::env::args_os()));
}
