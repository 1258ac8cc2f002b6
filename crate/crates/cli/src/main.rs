fn main() {
    let code = catdisp_cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
