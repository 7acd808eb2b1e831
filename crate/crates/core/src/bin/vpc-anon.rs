fn main() {
    std::process::exit(vpc_anon::cli::run(std::env::args_os()));
}
