fn main() {
    std::process::exit(mmo_asa::harness::cli::run(std::env::args_os()));
}
