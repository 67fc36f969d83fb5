use clap::Parser;
use vmbeam::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors share the config-error code
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = vmbeam::run(cli, &mut stdout) {
        eprintln!("vmbeam: {e}");
        std::process::exit(e.exit_code());
    }
}
