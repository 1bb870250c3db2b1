fn main() {
    std::process::exit(pvdaq::cli::main_with(std::env::args_os()));
}
