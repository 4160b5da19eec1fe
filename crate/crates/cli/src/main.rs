fn main() {
    std::process::exit(shell_ld_cli::run());
}
