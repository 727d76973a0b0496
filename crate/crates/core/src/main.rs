use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sliced::assertgen::{gen_path_discovery, parse_assertions, type_check, write_assertions};
use sliced::checker::CheckOptions;
use sliced::composer::CompositeMachine;
use sliced::config::{Config, ConfigError};
use sliced::ir::Assertion;
use sliced::ops::{self, MergeSpec, OpError, PlanRequest};
use sliced::pipeline::{load_file, with_initial, Model};
use sliced::reducer::find_merge_candidates;
use sliced::simulator::{parse_script, replay, replay_merged, simulate};
use sliced::smv::{emit, emit_trace, parse_traces, EmitOptions};

const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_UNAVAILABLE: u8 = 69;
const EXIT_INTERNAL: u8 = 70;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("cannot read `{path}`: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Usage(String),
    #[error("NuSMV backend: {0}")]
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Op(e) if e.is_cap_exceeded() => EXIT_INTERNAL,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Write { .. } => EXIT_INTERNAL,
            CliError::Backend(_) => EXIT_UNAVAILABLE,
            _ => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn op<T, E: Into<OpError>>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Op(e.into()))
}

/// Translate component-graph models into state machines, check them, plan
/// repairs, and emit NuSMV.
#[derive(Debug, Parser)]
#[command(name = "sliced", version, propagate_version = true)]
struct Cli {
    /// Config file; defaults to $SLICED_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct MergeFlags {
    /// Merge the subsystem fed by this instance (repeatable).
    #[arg(long = "merge", value_name = "SOURCE")]
    merge: Vec<String>,
    /// Merge every eligible subsystem, largest first.
    #[arg(long)]
    auto_merge: bool,
}

impl MergeFlags {
    fn spec(&self) -> MergeSpec {
        MergeSpec::from_flags(self.merge.clone(), self.auto_merge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Internal,
    Nusmv,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Block counts and classification summary.
    Stats {
        /// Model document (JSON).
        model: PathBuf,
        /// Print the per-block classification instead of JSON counts.
        #[arg(long)]
        table: bool,
    },
    /// Emit the NuSMV file for a model.
    Translate {
        /// Model document (JSON).
        model: PathBuf,
        /// Write here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Emit the legacy two-output Battery layout (first output counted twice).
        #[arg(long)]
        faithful_listing: bool,
        #[command(flatten)]
        merges: MergeFlags,
        /// Start an instance in an error state, e.g. Battery1=dead (with --goal).
        #[arg(long, value_name = "NAME=STATE")]
        fail: Vec<String>,
        /// Emit a path-discovery assertion for this goal instead of the auto suite.
        #[arg(long)]
        goal: Option<String>,
    },
    /// Write the generated assertion suite.
    Assert {
        /// Model document (JSON).
        model: PathBuf,
        /// Generate safety, liveness and capacity assertions (the only mode).
        #[arg(long, default_value_t = true)]
        auto: bool,
        /// Write here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check assertions with the internal checker or NuSMV.
    Check {
        /// Model document (JSON).
        model: PathBuf,
        /// `auto` or an assertion file.
        #[arg(long = "assert", default_value = "auto")]
        assertions: String,
        /// Lasso length limit for liveness.
        #[arg(long)]
        bound: Option<usize>,
        /// Maximum number of explored states.
        #[arg(long)]
        cap: Option<usize>,
        /// Write counterexamples here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Which checker to run.
        #[arg(long, value_enum, default_value_t = Backend::Internal)]
        backend: Backend,
        /// Worker threads; 1 disables parallel search.
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        merges: MergeFlags,
    },
    /// Report or apply subsystem merges.
    Merge {
        /// Model document (JSON).
        model: PathBuf,
        /// Merge the subsystem fed by this instance (repeatable).
        #[arg(long, value_name = "SOURCE")]
        subsystem: Vec<String>,
        /// Merge every eligible subsystem, largest first.
        #[arg(long)]
        auto_merge: bool,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the merged NuSMV file.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Search for a repair plan.
    Plan {
        /// Model document (JSON).
        model: PathBuf,
        /// Start an instance in an error state (repeatable).
        #[arg(long, value_name = "NAME=STATE", required = true)]
        fail: Vec<String>,
        /// Goal predicate, e.g. "Battery1.state = nominal & Battery1.draw <= 2".
        #[arg(long)]
        goal: String,
        /// Predicate every plan state must satisfy (repeatable).
        #[arg(long)]
        keep: Vec<String>,
        /// Let the solver use fault transitions too.
        #[arg(long)]
        allow_faults: bool,
        /// Forbid flipping the same component in consecutive steps.
        #[arg(long)]
        toggle_guard: bool,
        /// Maximum number of explored states.
        #[arg(long)]
        cap: Option<usize>,
        /// Write the plan trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scripted simulation.
    Simulate {
        /// Model document (JSON).
        model: PathBuf,
        /// JSON script: step number -> label -> value.
        #[arg(long)]
        script: PathBuf,
        /// Number of states to produce.
        #[arg(long)]
        horizon: usize,
        /// Start an instance in a given state (repeatable).
        #[arg(long, value_name = "NAME=STATE")]
        init: Vec<String>,
        /// Write the trace here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay traces in the simulator and compare step by step.
    Replay {
        /// Model document (JSON).
        model: PathBuf,
        /// Trace file; may hold several traces.
        #[arg(long)]
        trace: PathBuf,
        /// Start an instance in a given state (repeatable).
        #[arg(long, value_name = "NAME=STATE")]
        init: Vec<String>,
        #[command(flatten)]
        merges: MergeFlags,
    },
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Write { path: p.display().to_string(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path, cfg: &Config) -> CliResult<Model> {
    op(load_file(path, cfg))
}

fn check_options(cfg: &Config, cap: Option<usize>, bound: Option<usize>, threads: Option<usize>) -> CheckOptions {
    let threads = threads.or(cfg.checker.threads);
    if let Some(n) = threads.filter(|&n| n > 1) {
        // ignore failure: a global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    CheckOptions {
        cap: cap.unwrap_or_else(|| cfg.state_cap()),
        bound: bound.unwrap_or_else(|| cfg.bound()),
        parallel: threads != Some(1),
    }
}

fn load_assertions(spec: &str, m: &CompositeMachine) -> CliResult<Vec<Assertion>> {
    if spec == "auto" {
        return op(ops::auto_assertions(m));
    }
    let asserts = parse_assertions(&read(Path::new(spec))?).map_err(|e| CliError::Data(format!("{spec}: {e}")))?;
    op(type_check(m, &asserts))?;
    Ok(asserts)
}

fn run(cli: Cli) -> CliResult<u8> {
    let cfg = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Cmd::Stats { model, table } => {
            let model = load(&model, &cfg)?;
            if table {
                let mut out = String::new();
                for (path, tag) in &model.classification.classified {
                    writeln!(out, "{path}\t{tag}\t{}", model.names[path]).unwrap();
                }
                for path in &model.classification.unmatched {
                    writeln!(out, "{path}\tunmatched").unwrap();
                }
                for open in &model.report.open {
                    writeln!(out, "{}\topen endpoint at {}", open.source, open.dead_end).unwrap();
                }
                write_out(None, &out)?;
            } else {
                let stats = op(model.stats(&cfg).map_err(sliced::pipeline::PipelineError::from))?;
                let mut json = serde_json::to_value(&stats).expect("stats serialize");
                json["instances"] = model.machine.instances.len().into();
                json["connections"] = model.machine.connections.len().into();
                json["channels"] = model.machine.channels.len().into();
                json["open_endpoints"] = model.report.open.len().into();
                json["state_space_bound"] = model.machine.state_space_bound().to_string().into();
                write_out(None, &format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))?;
            }
            Ok(0)
        }
        Cmd::Translate { model, output, faithful_listing, merges, fail, goal } => {
            let model = load(&model, &cfg)?;
            let (m, _) = op(ops::apply_merges(&model.machine, &merges.spec(), cfg.enumeration_cap()))?;
            let (m, asserts) = match goal {
                Some(g) => {
                    let failures = op(ops::parse_assignments(&fail))?;
                    let (m2, a) = op(gen_path_discovery(&m, &failures, &op(ops::parse_pred(&g))?))?;
                    (m2, vec![a])
                }
                None if !fail.is_empty() => return Err(CliError::Usage("--fail needs --goal".into())),
                None => {
                    let a = op(ops::auto_assertions(&m))?;
                    (m, a)
                }
            };
            let text = op(emit(&m, &asserts, EmitOptions { faithful_listing }))?;
            write_out(output.as_deref(), &text)?;
            Ok(0)
        }
        Cmd::Assert { model, auto, output } => {
            if !auto {
                return Err(CliError::Usage("only --auto generation is supported".into()));
            }
            let model = load(&model, &cfg)?;
            let asserts = op(ops::auto_assertions(&model.machine))?;
            write_out(output.as_deref(), &write_assertions(&asserts))?;
            Ok(0)
        }
        Cmd::Check { model, assertions, bound, cap, trace, backend, threads, merges } => {
            let model = load(&model, &cfg)?;
            let (m, _) = op(ops::apply_merges(&model.machine, &merges.spec(), cfg.enumeration_cap()))?;
            let asserts = load_assertions(&assertions, &m)?;
            if backend == Backend::Nusmv {
                return check_nusmv(&m, &asserts);
            }
            let opts = check_options(&cfg, cap, bound, threads);
            let entries = ops::check_all(&m, &asserts, opts);
            let mut report = String::new();
            let mut traces = String::new();
            for e in &entries {
                let text = e.render();
                report.push_str(&text);
                if e.falsified().is_some() {
                    traces.push_str(&text);
                }
            }
            write_out(None, &report)?;
            if let Some(p) = trace {
                write_out(Some(&p), &traces)?;
            }
            let verified = entries.iter().filter(|e| e.is_verified()).count();
            let falsified = entries.iter().filter(|e| e.falsified().is_some()).count();
            eprintln!(
                "{} assertions: {verified} verified, {falsified} falsified, {} unknown",
                entries.len(),
                entries.len() - verified - falsified
            );
            Ok(ops::check_status(&entries) as u8)
        }
        Cmd::Merge { model, subsystem, auto_merge, report, output } => {
            let model = load(&model, &cfg)?;
            let spec = MergeSpec::from_flags(subsystem, auto_merge);
            let (json, merged) = if spec == MergeSpec::None {
                let cands = op(find_merge_candidates(&model.machine, cfg.enumeration_cap()))?;
                let reports: Vec<_> = cands.iter().map(|c| c.report()).collect();
                (serde_json::to_string_pretty(&reports).expect("json"), None)
            } else {
                let (m, cands) = op(ops::apply_merges(&model.machine, &spec, cfg.enumeration_cap()))?;
                let reports: Vec<_> = cands.iter().map(|c| c.report()).collect();
                (serde_json::to_string_pretty(&reports).expect("json"), Some(m))
            };
            write_out(report.as_deref(), &format!("{json}\n"))?;
            if let Some(path) = output {
                let m = merged.unwrap_or(model.machine);
                let asserts = op(ops::auto_assertions(&m))?;
                write_out(Some(&path), &op(emit(&m, &asserts, EmitOptions::default()))?)?;
            }
            Ok(0)
        }
        Cmd::Plan { model, fail, goal, keep, allow_faults, toggle_guard, cap, trace } => {
            let model = load(&model, &cfg)?;
            let mut keep_all = cfg.plan.keep.clone();
            keep_all.extend(keep);
            let req = PlanRequest {
                failures: op(ops::parse_assignments(&fail))?,
                goal,
                keep: keep_all,
                toggle_guard: toggle_guard || cfg.plan.toggle_guard,
                allow_faults: allow_faults || cfg.plan.allow_faults,
            };
            let result = op(ops::plan(&model.machine, &req, check_options(&cfg, cap, None, None)))?;
            let text = result.render();
            match result.plan() {
                Some(t) => {
                    write_out(trace.as_deref(), &text)?;
                    eprintln!("plan found: {} states", t.len());
                    Ok(0)
                }
                None => {
                    eprint!("{text}");
                    Ok(1)
                }
            }
        }
        Cmd::Simulate { model, script, horizon, init, out } => {
            let model = load(&model, &cfg)?;
            let m = op(with_initial(&model.machine, &op(ops::parse_assignments(&init))?))?;
            let script = op(parse_script(&read(&script)?))?;
            let t = op(simulate(&m, &script, horizon))?;
            write_out(out.as_deref(), &emit_trace(&t, ""))?;
            Ok(0)
        }
        Cmd::Replay { model, trace, init, merges } => {
            let model = load(&model, &cfg)?;
            let m = op(with_initial(&model.machine, &op(ops::parse_assignments(&init))?))?;
            let (_, cands) = op(ops::apply_merges(&m, &merges.spec(), cfg.enumeration_cap()))?;
            let traces =
                parse_traces(&read(&trace)?).map_err(|e| CliError::Data(format!("{}: {e}", trace.display())))?;
            if traces.is_empty() {
                return Err(CliError::Data(format!("{}: no trace found", trace.display())));
            }
            let mut all = true;
            for (k, t) in traces.iter().enumerate() {
                let merged = cands.iter().any(|c| t.var_index(&c.merged_label()).is_some());
                let report = if merged { replay_merged(&m, t, &cands) } else { replay(&m, t) };
                match report {
                    Ok(r) if r.agrees() => {
                        println!("trace {}: replicated ({} steps, {} values compared)", k + 1, r.steps, r.compared)
                    }
                    Ok(r) => {
                        all = false;
                        println!("trace {}: {} mismatches", k + 1, r.mismatches.len());
                        for mm in &r.mismatches {
                            println!("  {mm}");
                        }
                    }
                    Err(e) => {
                        all = false;
                        println!("trace {}: {e}", k + 1);
                    }
                }
            }
            Ok(if all { 0 } else { 1 })
        }
    }
}

fn nusmv_binary() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("NUSMV") {
        return Some(PathBuf::from(p));
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join("NuSMV")).find(|p| p.is_file())
}

fn check_nusmv(m: &CompositeMachine, asserts: &[Assertion]) -> CliResult<u8> {
    let bin = nusmv_binary().ok_or_else(|| CliError::Backend("NuSMV not found (set NUSMV or PATH)".into()))?;
    let text = op(emit(m, asserts, EmitOptions::default()))?;
    let file = std::env::temp_dir().join(format!("sliced-{}.smv", std::process::id()));
    std::fs::write(&file, text).map_err(|source| CliError::Write { path: file.display().to_string(), source })?;
    let out = Command::new(&bin).arg(&file).output();
    let _ = std::fs::remove_file(&file);
    let out = out.map_err(|e| CliError::Backend(format!("{}: {e}", bin.display())))?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    print!("{stdout}");
    eprint!("{}", String::from_utf8_lossy(&out.stderr));
    if !out.status.success() {
        return Err(CliError::Backend(format!("exited with {}", out.status)));
    }
    let verdicts: Vec<&str> = stdout.lines().filter(|l| l.starts_with("-- specification")).collect();
    if verdicts.iter().any(|l| l.trim_end().ends_with("is false")) {
        Ok(1)
    } else if verdicts.len() == asserts.len() {
        Ok(0)
    } else {
        Ok(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
