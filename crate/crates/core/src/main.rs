fn main() {
    std::process::exit(mmdlab::cli::main_entry());
}
