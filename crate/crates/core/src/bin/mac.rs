fn main() {
    std::process::exit(mac_core::harness::run_command(std::env::args_os()));
}
