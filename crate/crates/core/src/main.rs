fn main() {
    std::process::exit(robust_l2d::cli::run(std::env::args_os()));
}
