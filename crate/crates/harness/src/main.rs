use std::panic;
use std::process::ExitCode;

use obftf_harness::cli::{main_with_args, EXIT_INTERNAL};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let code = panic::catch_unwind(|| main_with_args(args)).unwrap_or(EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
