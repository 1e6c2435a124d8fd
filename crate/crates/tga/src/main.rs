fn main() { std::process::exit(tga::cli::run(std::env::args())) }
