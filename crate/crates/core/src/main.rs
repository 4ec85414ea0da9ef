use std::process::ExitCode;

fn main() -> ExitCode {
    specnet3d::cli::main()
}
