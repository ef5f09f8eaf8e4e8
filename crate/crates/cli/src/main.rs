mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use error::CliError;
use manifest::{RunManifest, RunRecord};

/// First stderr line: one JSON object with the error kind and message.
/// Everything after it is for humans.
fn report_error(kind: &str, message: &str, detail: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    if !detail.is_empty() {
        eprintln!("{}", detail.trim_end());
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Linearize(_) => "linearize",
        Command::Biasmap(_) => "biasmap",
        Command::Encode(_) => "encode",
        Command::Gradcheck(_) => "gradcheck",
        Command::Paramcount(_) => "paramcount",
        Command::GenTask(_) => "gen-task",
        Command::Train(_) => "train",
        Command::Ablate(_) => "ablate",
        Command::Perturb(_) => "perturb",
        Command::InvarianceCheck(_) => "invariance-check",
        Command::Vp(_) => "vp",
    }
}

fn dispatch(c: &Command, rec: &mut RunRecord) -> Result<(), CliError> {
    match c {
        Command::Linearize(a) => commands::linearize_cmd(a, rec),
        Command::Biasmap(a) => commands::biasmap_cmd(a, rec),
        Command::Encode(a) => commands::encode_cmd(a, rec),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a, rec),
        Command::Paramcount(a) => commands::paramcount_cmd(a, rec),
        Command::GenTask(a) => commands::gen_task_cmd(a, rec),
        Command::Train(a) => commands::train_cmd(a, rec),
        Command::Ablate(a) => commands::ablate_cmd(a, rec),
        Command::Perturb(a) => commands::perturb_cmd(a, rec),
        Command::InvarianceCheck(a) => commands::invariance_cmd(a, rec),
        Command::Vp(a) => commands::vp_cmd(a, rec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let message = rendered.lines().next().unwrap_or("invalid arguments");
            let message = message.strip_prefix("error: ").unwrap_or(message);
            report_error("usage", message, &rendered);
            return ExitCode::from(2);
        }
    };

    let name = command_name(&cli.command);
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut rec = RunRecord::default();
    let result = dispatch(&cli.command, &mut rec);
    let status = result.as_ref().err().map_or("ok", |e| e.kind());

    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(name, &rec.outputs));
    let manifest = RunManifest::new(name, rec, status, started, clock.elapsed());
    let written = relbias::io::write_json(&path, &manifest);

    match (result, written) {
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
        (Ok(()), Err(e)) => {
            let e = CliError::File { path, source: e };
            report_error(e.kind(), &e.to_string(), "could not write the run manifest");
            ExitCode::from(1)
        }
        (Err(e), _) => {
            let detail = format!("relbias {name} failed: {e}\nrun manifest: {}", path.display());
            report_error(e.kind(), &e.to_string(), &detail);
            ExitCode::from(e.exit_code())
        }
    }
}
