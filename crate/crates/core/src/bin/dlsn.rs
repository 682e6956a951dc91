fn main() {
    std::process::exit(dlsn::cli_io::run(std::env::args_os()));
}
