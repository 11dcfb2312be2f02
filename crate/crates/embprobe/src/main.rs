fn main() {
    std::process::exit(embprobe::cli::run());
}
