fn main() {
    std::process::exit(iotformer::cli::run(std::env::args_os()));
}
