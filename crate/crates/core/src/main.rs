fn main() {
    std::process::exit(sense_bandits::cli::main_with_args(std::env::args_os()));
}
