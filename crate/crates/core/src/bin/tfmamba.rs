fn main() {
    std::process::exit(tf_mamba::cli::main_with(std::env::args_os()));
}
