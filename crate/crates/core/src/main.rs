fn main() {
    std::process::exit(crossgram::cli::run(std::env::args_os()));
}
