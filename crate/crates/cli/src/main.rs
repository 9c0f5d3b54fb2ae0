fn main() {
    std::process::exit(spherical_sfm_cli::run(std::env::args_os()));
}
