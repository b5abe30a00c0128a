fn main() {
    std::process::exit(curvup::cli::run(std::env::args_os()));
}
