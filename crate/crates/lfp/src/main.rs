fn main() {
    let code = lfp::cli::main_with(std::env::args().collect());
    std::process::exit(code as i32);
}
