fn main() {
    std::process::exit(adiavac::cli::run(std::env::args_os()));
}
