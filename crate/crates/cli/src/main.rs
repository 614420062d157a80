use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use failscope::diagnose::CommandBackend;
use failscope::report::SCHEMA_VERSION;
use failscope::synth::{synthesize, Category};
use failscope::{run_pipeline, Config, Report};

const EXIT_PARSE: u8 = 2;
const EXIT_PIPELINE: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "failscope", version, about = "Diagnose failed agent runs and emit gated recovery hints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over one or more trace files and write reports.
    Diagnose {
        /// Trace file (JSON Lines). Repeat for several runs.
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        /// JSON config; omitted values keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path for a single trace, or a directory for several.
        /// Defaults to stdout for one trace and `<trace>.report.json` otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave the wall-clock timestamp out so reruns are byte-identical.
        #[arg(long)]
        deterministic: bool,
        /// Traces processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write a synthetic failed run seeded with one failure pattern.
    Synth {
        #[arg(long)]
        category: Category,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trace path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the hint block of a stored report at another budget.
    Hint {
        #[arg(long)]
        report: PathBuf,
        /// Token budget; the report's configured budget when omitted.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Validate a stored report and print it, or a digest with --summary.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        summary: bool,
    },
    /// Print the default config, or validate a config file with --check.
    Config {
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn fail(code: u8, err: impl Into<anyhow::Error>) -> Failure {
    Failure { code, err: err.into() }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    // Usage errors share the config exit code; 2 is reserved for unreadable
    // inputs.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Diagnose {
            trace,
            config,
            out,
            deterministic,
            jobs,
        } => cmd_diagnose(&trace, config.as_deref(), out.as_deref(), deterministic, jobs),
        Command::Synth { category, seed, out } => cmd_synth(category, seed, out.as_deref()),
        Command::Hint { report, budget } => cmd_hint(&report, budget),
        Command::Report { report, summary } => cmd_report(&report, summary),
        Command::Config { check } => cmd_config(check.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(|e| fail(EXIT_CONFIG, e)),
        None => Ok(Config::default()),
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn diagnose_one(path: &Path, cfg: &Config, backend: Option<&CommandBackend>, deterministic: bool) -> Result<Report, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read trace {}", path.display()))
        .map_err(|e| fail(EXIT_PARSE, e))?;
    let source = path.display().to_string();
    let backend = backend.map(|b| b as &dyn failscope::diagnose::DiagnosisBackend);
    let mut report = run_pipeline(&text, &source, cfg, backend).map_err(|e| {
        let code = if e.is_parse_failure() { EXIT_PARSE } else { EXIT_PIPELINE };
        fail(code, anyhow!("{source}: {e}"))
    })?;
    if !deterministic {
        report.run.generated_at_ms = Some(now_ms());
    }
    if let Some(reason) = &report.fallback_reason {
        eprintln!("{source}: backend failed, used deterministic fallback: {reason}");
    }
    Ok(report)
}

fn report_path(trace: &Path, out: Option<&Path>, many: bool) -> Option<PathBuf> {
    match (out, many) {
        (Some(p), false) => Some(p.to_path_buf()),
        (None, false) => None,
        (dir, true) => {
            let name = trace.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let file = format!("{}.report.json", name.trim_end_matches(".jsonl"));
            Some(match dir {
                Some(d) => d.join(file),
                None => trace.with_file_name(file),
            })
        }
    }
}

fn cmd_diagnose(traces: &[PathBuf], config: Option<&Path>, out: Option<&Path>, deterministic: bool, jobs: usize) -> CmdResult {
    let cfg = load_config(config)?;
    let backend = CommandBackend::from_config(&cfg.diagnose.backend);
    let many = traces.len() > 1;
    if many {
        if let Some(dir) = out {
            fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))
                .map_err(|e| fail(EXIT_PIPELINE, e))?;
        }
    }

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<CmdResult>>> = traces.iter().map(|_| Mutex::new(None)).collect();
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(trace) = traces.get(i) else { break };
        let r = diagnose_one(trace, &cfg, backend.as_ref(), deterministic).and_then(|report| {
            let dest = report_path(trace, out, many);
            write_output(dest.as_deref(), &(report.to_json() + "\n")).map_err(|e| fail(EXIT_PIPELINE, e))?;
            if let Some(d) = dest {
                let g = &report.gate.guidance;
                let verdict = match g.non_injectable_reason {
                    None => "injectable".to_string(),
                    Some(r) => format!("blocked ({r:?})"),
                };
                eprintln!("{} -> {}: guidance {verdict}", trace.display(), d.display());
            }
            Ok(())
        });
        *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, traces.len().max(1)) {
            s.spawn(work);
        }
    });

    let mut first_failure = None;
    for slot in results {
        if let Some(Err(f)) = slot.into_inner().unwrap_or_else(|e| e.into_inner()) {
            if first_failure.is_none() {
                first_failure = Some(f);
            } else {
                eprintln!("error: {:#}", f.err);
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn cmd_synth(category: Category, seed: u64, out: Option<&Path>) -> CmdResult {
    write_output(out, &synthesize(category, seed)).map_err(|e| fail(EXIT_PIPELINE, e))
}

fn load_report(path: &Path) -> Result<Report, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read report {}", path.display()))
        .map_err(|e| fail(EXIT_PARSE, e))?;
    let report = Report::from_json(&text)
        .with_context(|| format!("invalid report {}", path.display()))
        .map_err(|e| fail(EXIT_PARSE, e))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(fail(
            EXIT_PARSE,
            anyhow!("invalid report: schema version {} (expected {SCHEMA_VERSION})", report.schema_version),
        ));
    }
    let dangling = report.dangling_ids();
    if !dangling.is_empty() {
        return Err(fail(EXIT_PARSE, anyhow!("invalid report: unresolved ids {}", dangling.join(", "))));
    }
    Ok(report)
}

fn cmd_hint(path: &Path, budget: Option<usize>) -> CmdResult {
    let report = load_report(path)?;
    let budget = budget.unwrap_or(report.config.gate.budget_tokens);
    let hint = report.rehint(budget).map_err(|e| fail(EXIT_CONFIG, e))?;
    write_output(None, &hint.text).map_err(|e| fail(EXIT_PIPELINE, e))
}

fn cmd_report(path: &Path, summary: bool) -> CmdResult {
    let report = load_report(path)?;
    let text = if summary { report.summary() } else { report.to_json() + "\n" };
    write_output(None, &text).map_err(|e| fail(EXIT_PIPELINE, e))
}

fn cmd_config(check: Option<&Path>) -> CmdResult {
    let cfg = load_config(check)?;
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| fail(EXIT_CONFIG, e))?;
    write_output(None, &(text + "\n")).map_err(|e| fail(EXIT_PIPELINE, e))
}
