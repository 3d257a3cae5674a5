fn main() {
    std::process::exit(diffdepth::app::main());
}
