fn main() {
    std::process::exit(henon_thermo::cli::main_with(std::env::args_os()));
}
