fn main() {
    std::process::exit(policy_targeting::cli::run(std::env::args_os()));
}
