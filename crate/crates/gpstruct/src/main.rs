fn main() {
    std::process::exit(gpstruct::cli::run());
}
