fn main() {
    std::process::exit(letterlora::cli::dispatch(std::env::args_os()));
}
