fn main() {
    std::process::exit(flowadj::cli::run(std::env::args_os()));
}
