fn main() {
    std::process::exit(dirpoly::cli::main_entry());
}
