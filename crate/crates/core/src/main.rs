fn main() {
    std::process::exit(rydberg_sensor::cli::run(std::env::args_os()));
}
