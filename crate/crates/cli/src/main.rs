fn main() {
    std::process::exit(tsnmf_cli::run(std::env::args_os()));
}
