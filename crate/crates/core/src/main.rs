fn main() {
    std::process::exit(framesift::cli::main_with_args(std::env::args_os()));
}
