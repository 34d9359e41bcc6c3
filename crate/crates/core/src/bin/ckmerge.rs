fn main() {
    let code = ckmerge::cli::run_with_io(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
