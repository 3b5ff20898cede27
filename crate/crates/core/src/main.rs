fn main() {
    std::process::exit(multidepth::cli::run(std::env::args_os()));
}
