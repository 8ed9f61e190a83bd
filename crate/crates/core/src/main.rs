use std::io::{self, IsTerminal};
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = io::stdout();
    let tty = stdout.is_terminal();
    let mut out = stdout.lock();
    let mut err = io::stderr().lock();
    let mut io = campaign_forge::cli::Io {
        out: &mut out,
        err: &mut err,
        tty,
    };
    let code = campaign_forge::cli::run(std::env::args_os(), &mut io);
    ExitCode::from(code as u8)
}
