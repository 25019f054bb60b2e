fn main() {
    std::process::exit(kgat::cli::run(std::env::args_os()));
}
