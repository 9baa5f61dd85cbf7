fn main() {
    std::process::exit(fluxgrad::cli::main_entry());
}
