fn main() {
    std::process::exit(ksib::cli::main());
}
