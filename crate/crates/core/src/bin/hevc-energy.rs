use std::io::Write;

use anyhow::Context;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let mut stdout = std::io::stdout().lock();
    let code = hevc_energy::cli::run(std::env::args_os(), &mut stdout, &mut std::io::stderr().lock());
    stdout.flush().context("flushing stdout")?;
    std::process::exit(code)
}
