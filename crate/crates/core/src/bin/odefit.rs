fn main() {
    std::process::exit(odefit::cli::run(std::env::args_os()));
}
