use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use pilot_core::agent::{trace_header, write_trace};
use pilot_core::smiles::validate_smiles;
use pilot_core::{Agent, AgentConfig, AgentEvent, ChatBackend, Clock, ParameterValue, Session, ToolRegistry};

const HELP: &str = "\
commands:
  :keys                 list memory keys
  :show <key>           print the newest value of a key
  :put <key> <json>     store a JSON value
  :load <key> <file>    store a file of SMILES, one per line
  :delete <key>         remove a key
  :quit                 leave";

pub fn run(backend: Arc<dyn ChatBackend>, config: AgentConfig, clock: Clock, trace: Option<&Path>) -> Result<()> {
    let mut trace_file = match trace {
        Some(path) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening trace file {}", path.display()))?;
            writeln!(f, "{}", trace_header(&config))?;
            Some(f)
        }
        None => None,
    };
    let agent = Agent::with_clock(backend, ToolRegistry::standard(), config, clock);
    let mut session = Session::new();
    eprintln!("session {}; type :help for commands", session.id);

    let stdin = io::stdin();
    let mut out = io::stdout();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(cmd) = line.strip_prefix(':') {
            match command(&session, cmd) {
                Ok(true) => continue,
                Ok(false) => break,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    continue;
                }
            }
        }
        let outcome = agent.run_query_observed(&mut session, line, &mut report_event);
        match &outcome.result {
            Ok(answer) => writeln!(out, "{answer}")?,
            Err(failure) => writeln!(out, "[failed] {failure}")?,
        }
        if let Some(f) = trace_file.as_mut() {
            write_trace(f, line, &outcome)?;
        }
    }
    Ok(())
}

fn report_event(event: &AgentEvent) {
    match event {
        AgentEvent::ToolCall { tool, .. } => eprintln!("  -> {tool}"),
        AgentEvent::ToolResult { stored_as: Some(key), .. } => eprintln!("  <- stored as {key}"),
        AgentEvent::FefoFeedback { errors, retry, .. } => {
            let classes: Vec<&str> = errors.iter().map(|e| e.class_name()).collect();
            eprintln!("  retry {retry}: {}", classes.join(", "));
        }
        _ => {}
    }
}

/// Returns `false` when the session should end.
fn command(session: &Session, cmd: &str) -> Result<bool> {
    let mut parts = cmd.splitn(3, ' ');
    let name = parts.next().unwrap_or_default();
    let key = parts.next().unwrap_or_default().trim();
    let rest = parts.next().unwrap_or_default().trim();
    match name {
        "q" | "quit" | "exit" => return Ok(false),
        "help" => println!("{HELP}"),
        "keys" => {
            for s in session.pool.read().summaries() {
                println!("{:<32} {:<14} depth {}", s.key.as_str(), s.type_name, s.depth);
            }
        }
        "show" => println!("{}", session.pool.read().resolve(key)?.to_json()),
        "put" => {
            let value: serde_json::Value = serde_json::from_str(rest).context("value must be JSON")?;
            session.pool.write().put_str(key, ParameterValue::from_json(&value))?;
        }
        "load" => {
            let reader = io::BufReader::new(File::open(rest).with_context(|| format!("opening {rest}"))?);
            let mut molecules = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let s = line.trim();
                if s.is_empty() {
                    continue;
                }
                validate_smiles(s).with_context(|| format!("line {}", i + 1))?;
                molecules.push(s.to_string());
            }
            let n = molecules.len();
            session.pool.write().put_str(key, ParameterValue::DrugList(molecules))?;
            println!("stored {n} molecules under {key}");
        }
        "delete" => {
            session.pool.write().delete(key)?;
        }
        other => eprintln!("unknown command :{other}; try :help"),
    }
    Ok(true)
}
