fn main() {
    std::process::exit(extraction_audit_cli::run_cli(std::env::args_os()));
}
