fn main() {
    std::process::exit(hffclock::cli::run(std::env::args_os()));
}
