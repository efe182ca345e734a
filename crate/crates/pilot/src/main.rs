mod chat;
mod harness;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pilot_core::dataset::{self, Category, FIXTURE_SEED};
use pilot_core::eval::{parse_counts, run_category, scale_bench, ScaleConfig};
use pilot_core::llm::BackendKind;
use pilot_core::{AgentConfig, BackendConfig, ChatBackend, Clock};
use pilot_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "pilot", version, about = "Tool-calling agent for drug discovery workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive session on stdin.
    Chat {
        #[command(flatten)]
        agent: AgentFlags,
        /// Append step traces as line-delimited JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a dataset category.
    Eval {
        /// Dataset file, JSON array or JSONL.
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        category: Category,
        #[command(flatten)]
        agent: AgentFlags,
        /// JSON report; an aligned text table is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Molecule-count sweep with and without the memory pool.
    Scale {
        /// `start:end:step` or a comma-separated list.
        #[arg(long, default_value = "2:20:2")]
        counts: String,
        /// Average SMILES length.
        #[arg(long, default_value_t = 90)]
        len: usize,
        /// Most molecules the inlined mode can emit in one response.
        #[arg(long, default_value_t = 50)]
        cap: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// HTTP API with per-session agents.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        backend: PathBuf,
        /// Directory of static assets to serve next to the API.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        no_pmp: bool,
        #[arg(long)]
        no_fefo: bool,
    },
    /// Write the synthetic dataset fixtures and the fault harness.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
        #[arg(long, default_value_t = FIXTURE_SEED)]
        seed: u64,
    },
}

#[derive(Args)]
struct AgentFlags {
    /// Backend config file (TOML with a `[backend]` table).
    #[arg(long)]
    backend: PathBuf,
    /// Inline memory contents into the prompt instead of key names.
    #[arg(long)]
    no_pmp: bool,
    /// Fail on the first invalid action instead of feeding errors back.
    #[arg(long)]
    no_fefo: bool,
}

impl AgentFlags {
    fn agent_config(&self) -> AgentConfig {
        AgentConfig { pmp: !self.no_pmp, fefo: !self.no_fefo, ..AgentConfig::default() }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Chat { agent, trace } => {
            let config = BackendConfig::load(&agent.backend)?;
            let (backend, clock) = build_backend(&config, false)?;
            chat::run(backend, agent.agent_config(), clock, trace.as_deref())
        }
        Command::Eval { cases, category, agent, report } => eval(&cases, category, &agent, report.as_deref()),
        Command::Scale { counts, len, cap, report } => {
            let counts = parse_counts(&counts).map_err(anyhow::Error::msg)?;
            if !(len > 0 && cap > 0) {
                bail!("--len and --cap must be positive");
            }
            let report_data = scale_bench(&ScaleConfig::new(counts, len, cap));
            let table = report_data.to_table();
            print!("{table}");
            if let Some(path) = report {
                write_report(&path, &report_data.to_json(), &table)?;
            }
            Ok(())
        }
        Command::Serve { addr, backend, static_dir, no_pmp, no_fefo } => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let mut config = ServiceConfig::new(BackendConfig::load(&backend)?);
            config.agent = AgentConfig { pmp: !no_pmp, fefo: !no_fefo, ..AgentConfig::default() };
            config.static_dir = static_dir;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(pilot_service::serve(addr, AppState::new(config)))?;
            Ok(())
        }
        Command::Fixtures { out, seed } => fixtures(&out, seed),
    }
}

/// Scripted backends run on a virtual clock so their reports are
/// reproducible to the bit.
fn build_backend(config: &BackendConfig, virtual_for_scripted: bool) -> Result<(Arc<dyn ChatBackend>, Clock)> {
    let clock = if virtual_for_scripted && config.kind == BackendKind::Scripted {
        Clock::virtual_clock().0
    } else {
        Clock::system()
    };
    Ok((config.build(&clock)?, clock))
}

fn eval(cases: &Path, category: Category, flags: &AgentFlags, report: Option<&Path>) -> Result<()> {
    let samples = dataset::load(cases)?;
    let cases = dataset::to_eval_cases(&samples, category)?;
    let config = BackendConfig::load(&flags.backend)?;
    let (backend, clock) = build_backend(&config, true)?;
    let result = run_category(&cases, category, backend, &flags.agent_config(), &clock)?;
    let table = result.to_table();
    print!("{table}");
    println!("acc_f={} acc_p={}", result.acc_f, result.acc_p);
    if let Some(path) = report {
        write_report(path, &serde_json::to_value(&result)?, &table)?;
    }
    Ok(())
}

fn write_report(path: &Path, json: &serde_json::Value, table: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(json)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    fs::write(path.with_extension("txt"), table)?;
    Ok(())
}

fn fixtures(out: &Path, seed: u64) -> Result<()> {
    let fx = dataset::generate_fixtures(seed);
    fx.write(out)?;
    let harness_dir = out.join("harness");
    fs::create_dir_all(&harness_dir)?;
    let cases = &fx.simple[..harness::DEFAULT_LAYOUT.len()];
    dataset::export(cases, &harness_dir.join("cases.json"))?;
    let backend = harness::fault_backend(cases, &harness::DEFAULT_LAYOUT)?;
    fs::write(harness_dir.join("backend.toml"), harness::to_toml(&backend)?)?;
    for (name, samples) in fx.files() {
        println!("{:>4} samples  {}", samples.len(), out.join(name).display());
    }
    println!("{:>4} samples  {}", cases.len(), harness_dir.join("cases.json").display());
    Ok(())
}
