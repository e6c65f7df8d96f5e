fn main() {
    std::process::exit(bsa_distill::harness::cli::main());
}
