fn main() {
    std::process::exit(sslb::run());
}
