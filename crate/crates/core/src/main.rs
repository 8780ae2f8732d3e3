fn main() {
    std::process::exit(motionatt::cli::cli_main(std::env::args_os()));
}
