fn main() {
    std::process::exit(specbound::cli::main());
}
