fn main() {
    std::process::exit(acss_gcn::cli::main());
}
