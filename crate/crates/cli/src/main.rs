fn main() {
    std::process::exit(archon::main(std::env::args_os()));
}
