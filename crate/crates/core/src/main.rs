fn main() {
    std::process::exit(hpcneuronet::cli::run(std::env::args_os()));
}
