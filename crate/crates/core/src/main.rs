fn main() {
    std::process::exit(amlstm::cli::run(std::env::args_os()));
}
