fn main() {
    std::process::exit(fbsde_core::lab::cli(std::env::args_os()));
}
