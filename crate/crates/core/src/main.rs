use std::io;

fn main() {
    let code = singular_heat::cli::dispatch(std::env::args(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
