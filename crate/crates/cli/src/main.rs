fn main() {
    std::process::exit(trajcluster::run(std::env::args_os()));
}
