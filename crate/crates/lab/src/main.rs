fn main() {
    std::process::exit(fgd_lab::cli::main_with(std::env::args_os()));
}
