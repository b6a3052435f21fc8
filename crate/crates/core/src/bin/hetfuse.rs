fn main() {
    if let Err(e) = hetfuse::cli::init_threads() {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    std::process::exit(hetfuse::cli::main_with_args(std::env::args_os()));
}
