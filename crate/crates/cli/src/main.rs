use std::process::ExitCode;

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match graspswarm_cli::run(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(clap_err) = err.downcast_ref::<clap::Error>() {
                // help and version requests land here too
                let _ = clap_err.print();
                return ExitCode::from(if clap_err.use_stderr() { 1 } else { 0 });
            }
            eprintln!("error: {err:#}");
            ExitCode::from(graspswarm_cli::exit_code(&err) as u8)
        }
    }
}
