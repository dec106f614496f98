fn main() {
    let code = reeb_surgery::cli::run(std::env::args_os());
    std::process::exit(code);
}
