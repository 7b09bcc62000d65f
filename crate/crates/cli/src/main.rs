fn main() {
    std::process::exit(slotshot::run(std::env::args_os()));
}
