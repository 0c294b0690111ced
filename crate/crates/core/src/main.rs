fn main() {
    std::process::exit(opinion_dist::cli::run(std::env::args_os()));
}
