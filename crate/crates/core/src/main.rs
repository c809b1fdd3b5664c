fn main() {
    std::process::exit(blurclip::cli::run());
}
