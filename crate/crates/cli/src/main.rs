fn main() {
    std::process::exit(ddmem_cli::run(std::env::args_os()));
}
