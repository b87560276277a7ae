fn main() {
    std::process::exit(dualcycle::cli::run(std::env::args_os()));
}
