fn main() {
    std::process::exit(fvsrn::cli::run(std::env::args_os()));
}
