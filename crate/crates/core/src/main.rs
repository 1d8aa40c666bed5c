fn main() {
    std::process::exit(pucci_radial::cli::main());
}
