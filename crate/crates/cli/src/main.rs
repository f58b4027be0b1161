fn main() {
    let code = pacmargin_cli::dispatch(std::env::args());
    std::process::exit(code);
}
