use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};
use uqgate_mock::{MockLlmOptions, MockLlmServer, MockSidecar, MockSidecarOptions, Script};

#[derive(Parser)]
#[command(name = "uqgate-mock", about = "Serve the scripted mock endpoints until interrupted")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Chat-completions endpoint driven by a script file.
    Llm {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long)]
        reject_multi: bool,
    },
    /// Similarity sidecar.
    Sidecar,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let _server: Box<dyn std::any::Any> = match cli.cmd {
        Cmd::Llm { script, delay_ms, reject_multi } => {
            let opts = MockLlmOptions { reject_multi, delay: Duration::from_millis(delay_ms), ..Default::default() };
            let server = MockLlmServer::start(Script::load(&script)?, opts)?;
            println!("{}", server.url());
            Box::new(server)
        }
        Cmd::Sidecar => {
            let server = MockSidecar::start(MockSidecarOptions::default())?;
            println!("{}", server.url());
            Box::new(server)
        }
    };
    loop {
        thread::sleep(Duration::from_secs(3600));
    }
}
