fn main() {
    std::process::exit(metalearn_cli::run(std::env::args_os()));
}
