//! Command-line entry points: run a script, emit its rewritten form, and
//! manage dataset metadata sidecars.

use std::fs;
use std::io::Write;

use clap::{Args, Parser, Subcommand};

use crate::dataflow;
use crate::error::{Error, Result};
use crate::exec::{Backend, Session};
use crate::interp::{self, ExtRegistry};
use crate::meta;
use crate::optimize::OptFlags;
use crate::script::ast::ScriptProgram;
use crate::script::emit::emit;
use crate::script::parse::parse;
use crate::script::rewrite;

#[derive(Debug, Parser)]
#[command(name = "lfp", about = "Lazy dataframe engine for LFP scripts", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a script
    Run(RunArgs),
    /// Print the statically rewritten form of a script
    Rewrite(RewriteArgs),
    /// Dataset metadata sidecars
    Meta(MetaArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Script file to execute
    script: String,
    /// Execution backend
    #[arg(long, default_value = "eager", value_parser = ["eager", "stream"])]
    backend: String,
    /// Rows per chunk on the streaming backend
    #[arg(long, default_value_t = 65_536)]
    chunk_rows: usize,
    /// Cap in bytes on blocking state (streaming backend)
    #[arg(long)]
    mem_budget: Option<u64>,
    /// Disable every optimization pass
    #[arg(long, conflicts_with = "opt")]
    no_opt: bool,
    /// Comma-separated pass list
    #[arg(long, value_delimiter = ',', value_parser = PASS_NAMES)]
    opt: Option<Vec<String>>,
    /// Write pre/post task-graph DOT dumps to this file
    #[arg(long, value_name = "PATH")]
    explain: Option<String>,
    /// Dump execution statistics to stderr after the run
    #[arg(long)]
    stats: bool,
    /// Consult metadata sidecars when planning reads
    #[arg(long)]
    use_meta: bool,
}

#[derive(Debug, Args)]
struct RewriteArgs {
    /// Script file to rewrite
    script: String,
    /// Output path (stdout when omitted)
    #[arg(short, long)]
    out: Option<String>,
    /// Comma-separated pass list
    #[arg(long, value_delimiter = ',', value_parser = PASS_NAMES)]
    opt: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct MetaArgs {
    #[command(subcommand)]
    command: MetaCommand,
}

#[derive(Debug, Subcommand)]
enum MetaCommand {
    /// Scan a CSV file and write its metadata sidecar
    Scan { path: String },
    /// Print the stored sidecar for a CSV file
    Show { path: String },
}

const PASS_NAMES: [&str; 7] = [
    "colsel",
    "dropcols",
    "pushdown",
    "xpushdown",
    "dce",
    "persist",
    "lazyprint",
];

/// Everything `--opt`/`--no-opt` can toggle: three source rewrites plus the
/// four graph passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassSet {
    pub colsel: bool,
    pub dropcols: bool,
    pub lazyprint: bool,
    pub graph: OptFlags,
}

impl PassSet {
    pub fn all() -> PassSet {
        PassSet {
            colsel: true,
            dropcols: true,
            lazyprint: true,
            graph: OptFlags::all(),
        }
    }

    pub fn none() -> PassSet {
        PassSet {
            colsel: false,
            dropcols: false,
            lazyprint: false,
            graph: OptFlags::none(),
        }
    }

    pub fn parse(names: &[String]) -> PassSet {
        let mut set = PassSet::none();
        for name in names {
            match name.trim() {
                "colsel" => set.colsel = true,
                "dropcols" => set.dropcols = true,
                "lazyprint" => set.lazyprint = true,
                "pushdown" => set.graph.pushdown = true,
                "xpushdown" => set.graph.xpushdown = true,
                "dce" => set.graph.dce = true,
                "persist" => set.graph.persist = true,
                _ => {}
            }
        }
        set
    }
}

fn pass_set(no_opt: bool, opt: &Option<Vec<String>>) -> PassSet {
    if no_opt {
        return PassSet::none();
    }
    match opt {
        Some(names) => PassSet::parse(names),
        None => PassSet::all(),
    }
}

/// Apply the enabled source rewrites in their fixed order.
pub fn apply_rewrites(
    p: &ScriptProgram,
    passes: &PassSet,
    registry: &ExtRegistry,
) -> Result<ScriptProgram> {
    let mut p = p.clone();
    if passes.colsel {
        let cfg = dataflow::build_cfg(&p);
        let facts = dataflow::solve_liveness(&p, &cfg);
        p = rewrite::rewrite_column_selection(&p, &facts);
    }
    if passes.dropcols {
        let cfg = dataflow::build_cfg(&p);
        let facts = dataflow::solve_liveness(&p, &cfg);
        p = rewrite::rewrite_dropped_columns(&p, &facts);
    }
    if passes.lazyprint {
        let cfg = dataflow::build_cfg(&p);
        let facts = dataflow::solve_liveness(&p, &cfg);
        let live = dataflow::solve_live_frames(&facts);
        p = rewrite::rewrite_lazy_io(&p, &live, registry)?;
    }
    Ok(p)
}

fn load_program(path: &str) -> Result<ScriptProgram> {
    let src = fs::read_to_string(path).map_err(|_| Error::MissingFile {
        path: path.to_string(),
    })?;
    parse(&src)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let passes = pass_set(args.no_opt, &args.opt);
    let program = load_program(&args.script)?;
    let registry = ExtRegistry::default();
    let program = apply_rewrites(&program, &passes, &registry)?;

    let backend = match args.backend.as_str() {
        "stream" => Backend::stream(args.chunk_rows, args.mem_budget),
        _ => Backend::eager(),
    };
    let mut session = Session::new(backend, passes.graph);
    session.use_meta = args.use_meta;
    if args.explain.is_some() {
        session.explain = Some(Vec::new());
    }

    let run_result = interp::run_with_registry(&program, &mut session, &registry);
    // whatever reached stdout before an error still belongs to the user
    print!("{}", session.take_output());
    std::io::stdout().flush()?;

    if let Some(path) = &args.explain {
        let dumps = session.explain.take().unwrap_or_default();
        fs::write(path, dumps.join("\n"))?;
    }
    if args.stats {
        eprint!("{}", session.stats.dump(&session.graph));
    }
    run_result
}

fn cmd_rewrite(args: &RewriteArgs) -> Result<()> {
    let passes = match &args.opt {
        Some(names) => PassSet::parse(names),
        None => PassSet::all(),
    };
    let program = load_program(&args.script)?;
    let registry = ExtRegistry::default();
    let rewritten = apply_rewrites(&program, &passes, &registry)?;
    let text = emit(&rewritten);
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => {
            print!("{text}");
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}

fn cmd_meta(args: &MetaArgs) -> Result<u8> {
    match &args.command {
        MetaCommand::Scan { path } => {
            let m = meta::scan(path)?;
            println!(
                "scanned {} rows, {} columns -> {}",
                m.row_count,
                m.columns.len(),
                meta::sidecar_path(path)
            );
            Ok(0)
        }
        MetaCommand::Show { path } => match meta::read_sidecar(path)? {
            Some(m) => {
                print!("{}", meta::render_sidecar(&m));
                Ok(0)
            }
            None => {
                eprintln!("no metadata for {path}; run `lfp meta scan {path}` first");
                Ok(1)
            }
        },
    }
}

/// Parse argv and dispatch; returns the process exit code.
pub fn main_with(args: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; keep help/version on success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| 0).map_err(|e| (e, Some(a.script.clone()))),
        Command::Rewrite(a) => cmd_rewrite(a)
            .map(|_| 0)
            .map_err(|e| (e, Some(a.script.clone()))),
        Command::Meta(a) => cmd_meta(a).map_err(|e| (e, None)),
    };
    match result {
        Ok(code) => code,
        Err((e, script)) => {
            match (&e, script) {
                // syntax and runtime diagnostics point into the script
                (Error::Syntax { .. }, Some(path)) => eprintln!("{path}:{e}"),
                _ => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}
