//! Command-line driver: `fmt`, `check`, `graph`, `plan` and `run`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use archon_core::checker::{builtin_styles, check_all, load_library, resolve};
use archon_core::diag::{self, Code, Diagnostic};
use archon_core::export;
use archon_core::model::{builtin_type_table, Architecture, IoTarget, TypeTable};
use archon_core::parser::{format, parse_file, parse_library};
use archon_core::realizer::{self, BuildPlan};
use archon_core::SourceMap;
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "archon",
    version,
    about = "Compile and run component-and-connector architectures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the canonical formatting of a source file.
    Fmt { source: PathBuf },
    /// Report diagnostics; exit 2 if any is an error.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Render the architecture as DOT, or as JSON with --json.
    Graph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the build plan as JSON.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check, lower and execute; exit with the run's overall status.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the plan to this path.
        #[arg(long, value_name = "PATH")]
        emit_plan: Option<PathBuf>,
        /// Treat SOURCE as a plan written by --emit-plan.
        #[arg(long)]
        from_plan: bool,
        /// Wall-clock limit in seconds.
        #[arg(long, value_name = "SECONDS")]
        timeout: Option<f64>,
        /// Write the run report as JSON to this path.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    source: PathBuf,
    /// Type library to load; repeatable, loaded in order.
    #[arg(long = "lib", value_name = "PATH")]
    libs: Vec<PathBuf>,
    /// Style to check against, replacing the one the system declares.
    #[arg(long)]
    style: Option<String>,
    /// External input; `-` for standard input.
    #[arg(long, value_name = "PATH")]
    input: Option<String>,
    /// External output; `-` for standard output.
    #[arg(long, value_name = "PATH")]
    output: Option<String>,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

/// A resolved and checked source file.
pub struct Compiled {
    pub arch: Architecture,
    pub table: TypeTable,
    pub sources: SourceMap,
    pub diagnostics: Vec<Diagnostic>,
    pub base_dir: PathBuf,
}

/// Why compilation stopped before producing an architecture.
pub enum Failure {
    Parse(Vec<Diagnostic>, SourceMap),
    Resolve(Vec<Diagnostic>, SourceMap),
}

fn io_diag(path: &Path, e: std::io::Error) -> Diagnostic {
    Diagnostic::error(Code::Io, format!("cannot read {}: {e}", path.display()))
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    }
}

/// Finds a library: as given, else under each `ARCHON_LIB_PATH` entry.
fn find_library(p: &Path) -> Option<PathBuf> {
    if p.exists() {
        return Some(p.to_path_buf());
    }
    if p.is_absolute() {
        return None;
    }
    let search = std::env::var_os("ARCHON_LIB_PATH")?;
    std::env::split_paths(&search)
        .map(|d| d.join(p))
        .find(|c| c.exists())
}

fn load_libs(libs: &[PathBuf], sources: &mut SourceMap) -> Result<TypeTable, Vec<Diagnostic>> {
    let mut table = builtin_type_table();
    for lib in libs {
        let Some(path) = find_library(lib) else {
            return Err(vec![Diagnostic::error(
                Code::LibraryNotFound,
                format!(
                    "library {} not found here or on ARCHON_LIB_PATH",
                    lib.display()
                ),
            )]);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| vec![io_diag(&path, e)])?;
        let file = sources.add(path.display().to_string(), text.clone());
        let ast = parse_library(file, &text).map_err(|e| vec![e.to_diagnostic()])?;
        table = load_library(&table, &ast)?;
    }
    Ok(table)
}

pub fn compile(
    source: &Path,
    libs: &[PathBuf],
    style: Option<&str>,
    input: Option<&str>,
    output: Option<&str>,
) -> Result<Compiled, Failure> {
    let mut sources = SourceMap::new();
    let text = match std::fs::read_to_string(source) {
        Ok(t) => t,
        Err(e) => return Err(Failure::Parse(vec![io_diag(source, e)], sources)),
    };
    let file = sources.add(source.display().to_string(), text.clone());
    let ast = match parse_file(file, &text) {
        Ok(a) => a,
        Err(e) => return Err(Failure::Parse(vec![e.to_diagnostic()], sources)),
    };
    let table = match load_libs(libs, &mut sources) {
        Ok(t) => t,
        Err(d) => return Err(Failure::Resolve(d, sources)),
    };
    let (mut arch, table) = match resolve(&ast, &table) {
        Ok(r) => r,
        Err(d) => return Err(Failure::Resolve(d, sources)),
    };
    if let Some(s) = style {
        arch.style = Some(s.to_string());
    }
    let cli_target = |p: &str| match IoTarget::parse(p) {
        IoTarget::Path(p) => IoTarget::Path(absolute(Path::new(&p)).display().to_string()),
        IoTarget::Inherit => IoTarget::Inherit,
    };
    if let Some(i) = input {
        arch.io.input = Some(cli_target(i));
    }
    if let Some(o) = output {
        arch.io.output = Some(cli_target(o));
    }
    let diagnostics = check_all(&arch, &table, &builtin_styles());
    let base_dir = absolute(source.parent().unwrap_or(Path::new("")));
    Ok(Compiled {
        arch,
        table,
        sources,
        diagnostics,
        base_dir,
    })
}

fn report(diags: &[Diagnostic], sources: &SourceMap, json: bool) {
    let mut err = std::io::stderr().lock();
    if json {
        let _ = err.write_all(diag::to_json(diags, sources).as_bytes());
    } else {
        for d in diags {
            let _ = writeln!(err, "{}", d.render(sources));
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> i32 {
    match out {
        Some(p) => match std::fs::write(p, text) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("ERROR Io -:0:0 cannot write {}: {e}", p.display());
                EXIT_PARSE
            }
        },
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            let _ = stdout.flush();
            EXIT_OK
        }
    }
}

/// Compiles and reports diagnostics; `Err` carries the exit code to stop with.
fn checked(c: &Common) -> Result<Compiled, i32> {
    match compile(
        &c.source,
        &c.libs,
        c.style.as_deref(),
        c.input.as_deref(),
        c.output.as_deref(),
    ) {
        Ok(compiled) => {
            report(&compiled.diagnostics, &compiled.sources, c.json);
            Ok(compiled)
        }
        Err(Failure::Parse(d, s)) | Err(Failure::Resolve(d, s)) => {
            report(&d, &s, c.json);
            Err(EXIT_CHECK)
        }
    }
}

fn lower(compiled: &Compiled, json: bool) -> Result<BuildPlan, i32> {
    if diag::has_errors(&compiled.diagnostics) {
        return Err(EXIT_CHECK);
    }
    realizer::plan(
        &compiled.arch,
        &compiled.table,
        &compiled.arch.io,
        &compiled.base_dir.display().to_string(),
    )
    .map_err(|d| {
        report(&d, &compiled.sources, json);
        EXIT_CHECK
    })
}

fn run_command(
    common: &Common,
    emit_plan: Option<&Path>,
    from_plan: bool,
    timeout: Option<f64>,
    report_path: Option<&Path>,
) -> i32 {
    let plan = if from_plan {
        let text = match std::fs::read_to_string(&common.source) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}", io_diag(&common.source, e).render(&SourceMap::new()));
                return EXIT_CHECK;
            }
        };
        match BuildPlan::from_json(&text) {
            Ok(p) => p,
            Err(e) => {
                eprintln!(
                    "ERROR ParseError {}:0:0 not a build plan: {e}",
                    common.source.display()
                );
                return EXIT_CHECK;
            }
        }
    } else {
        let compiled = match checked(common) {
            Ok(c) => c,
            Err(code) => return code,
        };
        match lower(&compiled, common.json) {
            Ok(p) => p,
            Err(code) => return code,
        }
    };
    if let Some(p) = emit_plan {
        if emit(&plan.to_json(), Some(p)) != EXIT_OK {
            return EXIT_PARSE;
        }
    }
    let timeout = match timeout {
        Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
        Some(t) => {
            eprintln!("error: --timeout must be a positive number of seconds, got {t}");
            return EXIT_USAGE;
        }
        None => None,
    };
    let result = realizer::run(&plan, timeout);
    for e in &result.errors {
        eprintln!("ERROR Io -:0:0 {e}");
    }
    if let Some(p) = report_path {
        let text = serde_json::to_string_pretty(&result).expect("report serializes") + "\n";
        if let Err(e) = std::fs::write(p, text) {
            eprintln!("ERROR Io -:0:0 cannot write {}: {e}", p.display());
        }
    }
    result.status
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match cli.command {
        Command::Fmt { source } => {
            let text = match std::fs::read_to_string(&source) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}", io_diag(&source, e).render(&SourceMap::new()));
                    return EXIT_PARSE;
                }
            };
            let mut sources = SourceMap::new();
            let file = sources.add(source.display().to_string(), text.clone());
            match parse_file(file, &text) {
                Ok(ast) => emit(&format(&ast), None),
                Err(e) => {
                    eprintln!("{}", e.to_diagnostic().render(&sources));
                    EXIT_PARSE
                }
            }
        }
        Command::Check { common } => match checked(&common) {
            Ok(c) if diag::has_errors(&c.diagnostics) => EXIT_CHECK,
            Ok(_) => EXIT_OK,
            Err(code) => code,
        },
        Command::Graph { common, out } => match checked(&common) {
            Ok(c) => {
                let text = if common.json {
                    export::to_json(&c.arch)
                } else {
                    export::to_dot(&c.arch, &c.table)
                };
                emit(&text, out.as_deref())
            }
            Err(code) => code,
        },
        Command::Plan { common, out } => {
            let compiled = match checked(&common) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match lower(&compiled, common.json) {
                Ok(plan) => emit(&plan.to_json(), out.as_deref()),
                Err(code) => code,
            }
        }
        Command::Run {
            common,
            emit_plan,
            from_plan,
            timeout,
            report,
        } => run_command(
            &common,
            emit_plan.as_deref(),
            from_plan,
            timeout,
            report.as_deref(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_and_help_codes() {
        assert_eq!(main(["archon"]), EXIT_USAGE);
        assert_eq!(main(["archon", "nope", "x.arch"]), EXIT_USAGE);
        assert_eq!(main(["archon", "--version"]), EXIT_OK);
    }

    #[test]
    fn library_search_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.archlib"), "porttype P;\n").unwrap();
        assert_eq!(
            find_library(&dir.path().join("t.archlib")),
            Some(dir.path().join("t.archlib"))
        );
        assert_eq!(find_library(Path::new("/definitely/missing.archlib")), None);
    }

    #[test]
    fn cli_paths_are_absolutized() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.arch");
        std::fs::write(&src, "system S { pipeline p: input | A() | output; }").unwrap();
        let c = compile(&src, &[], None, Some("rel/in.txt"), Some("-"))
            .ok()
            .unwrap();
        let Some(IoTarget::Path(p)) = &c.arch.io.input else {
            panic!()
        };
        assert!(Path::new(p).is_absolute() && p.ends_with("rel/in.txt"));
        assert_eq!(c.arch.io.output, Some(IoTarget::Inherit));
        assert_eq!(c.base_dir, dir.path());
        assert!(c.diagnostics.is_empty());
    }
}
