// SPDX-License-Identifier: Apache-2.0

//! `vt` command grammar. Exit codes: 0 success, 1 user error, 2 internal or
//! I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value as Json};
use vt_core::canonical::{self, seconds};
use vt_core::{
    Alias, Connection, ContentHash, DescriptorKey, ExecutionLog, ExecutionStatus, LogFilter, ModuleId,
    ModuleInstance, Overrides, PortRef, PrimitiveOp, Value, ValueType, VersionId, Workflow,
};

use crate::error::{AppError, Result};
use crate::project::{find_root, Options, Project};
use crate::server;

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Parser)]
#[command(name = "vt", version, about = "Change-based provenance workflow engine")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Project root; defaults to the nearest enclosing project.
    #[arg(long, global = true, env = "VT_PROJECT")]
    pub project: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Where a mutating command applies. Defaults to HEAD.
#[derive(Debug, Args)]
pub struct At {
    /// Parent version (number or tag) instead of HEAD.
    #[arg(long = "at", value_name = "VERSION")]
    pub at: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project in the current directory (or --project).
    Init {
        /// Fixed vistrail UUID, for reproducible mashup ids.
        #[arg(long)]
        vistrail_id: Option<String>,
    },
    /// Add a module instance.
    AddModule {
        package: String,
        version: String,
        name: String,
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[command(flatten)]
        at: At,
    },
    /// Delete a module together with its connections.
    DeleteModule {
        id: u64,
        #[command(flatten)]
        at: At,
    },
    /// Connect SRC_ID.PORT to DST_ID.PORT.
    Connect {
        source: String,
        target: String,
        #[command(flatten)]
        at: At,
    },
    Disconnect {
        connection_id: u64,
        #[command(flatten)]
        at: At,
    },
    SetParam {
        module_id: u64,
        name: String,
        value: String,
        #[command(flatten)]
        at: At,
    },
    /// `tag [VERSION] NAME`, or `tag NAME --remove`.
    Tag {
        #[arg(num_args = 1..=2, required = true, value_name = "[VERSION] NAME")]
        args: Vec<String>,
        #[arg(long)]
        remove: bool,
    },
    /// `annotate [VERSION] KEY VALUE`.
    Annotate {
        #[arg(num_args = 2..=3, required = true, value_name = "[VERSION] KEY VALUE")]
        args: Vec<String>,
    },
    /// Print the version tree.
    Tree,
    /// Move HEAD to a version or tag.
    Checkout { target: String },
    /// Print the workflow at a version.
    Show { version: Option<String> },
    Diff { from: String, to: String },
    /// Execute a version and record the log.
    Run {
        version: Option<String>,
        #[arg(long = "set", value_name = "ID.PARAM=VALUE")]
        set: Vec<String>,
    },
    /// List recorded executions.
    Log {
        #[arg(long)]
        version: Option<String>,
        #[arg(long)]
        status: Option<ExecutionStatus>,
    },
    /// Plan, and with --apply perform, a package upgrade.
    Upgrade {
        version: Option<String>,
        #[arg(long)]
        apply: bool,
        #[arg(long)]
        allow_partial: bool,
    },
    #[command(subcommand)]
    Mashup(MashupCommand),
    #[command(subcommand)]
    Data(DataCommand),
    #[command(subcommand)]
    Packages(PackagesCommand),
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum MashupCommand {
    /// `--alias NAME=MODULE.PARAM[:DEFAULT]`; the default falls back to the
    /// parameter's current value.
    Create {
        title: String,
        #[arg(long = "alias", value_name = "NAME=MODULE.PARAM[:DEFAULT]", required = true)]
        aliases: Vec<String>,
        /// `NAME=V1,V2,...` restricts an alias to those values.
        #[arg(long = "choices", value_name = "NAME=V1,V2")]
        choices: Vec<String>,
        #[command(flatten)]
        at: At,
    },
    List,
    Run {
        mashup_id: String,
        #[arg(long = "bind", value_name = "ALIAS=VALUE")]
        bindings: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Store a file (`-` for stdin).
    Put {
        file: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// Record the blob as the next version of this hash.
        #[arg(long)]
        version_of: Option<String>,
    },
    /// Write a blob to stdout or --output.
    Get {
        hash: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// A hash and its predecessors, newest first.
    Versions { hash: String },
}

#[derive(Debug, Subcommand)]
pub enum PackagesCommand {
    List,
    Load { file: PathBuf },
}

/// What a command printed. `raw` bypasses both text and JSON rendering.
#[derive(Debug, Default)]
pub struct Output {
    pub lines: Vec<String>,
    pub json: Json,
    pub raw: Option<Vec<u8>>,
    /// A nonzero exit with a successful command, as for a failed run.
    pub exit: i32,
}

impl Output {
    fn new(lines: Vec<String>, json: Json) -> Self {
        Output {
            lines,
            json,
            ..Output::default()
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cwd = match std::env::current_dir() {
        Ok(cwd) => cwd,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let options = match Options::from_env() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.kind.exit_code();
        }
    };
    run(cli, &cwd, options, &mut io::stdout().lock(), &mut io::stderr().lock())
}

/// Parses `args` (without the program name) and runs them.
pub fn run_args<I, T>(args: I, cwd: &Path, options: Options, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("vt")).chain(args.into_iter().map(Into::into));
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli, cwd, options, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            1
        }
    }
}

pub fn run(cli: Cli, cwd: &Path, options: Options, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let json = cli.json;
    match dispatch(cli, cwd, options) {
        Ok(output) => {
            let written = match (&output.raw, json) {
                (Some(bytes), _) => out.write_all(bytes),
                (None, true) => out.write_all(render_json(&output.json).as_bytes()),
                (None, false) => output.lines.iter().try_for_each(|l| writeln!(out, "{l}")),
            };
            match written {
                Ok(()) => output.exit,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    2
                }
            }
        }
        Err(e) => {
            if json {
                let _ = out.write_all(render_json(&json!({"error": e.code, "detail": e.detail})).as_bytes());
            }
            let _ = writeln!(err, "error: {}", e.detail);
            e.kind.exit_code()
        }
    }
}

fn render_json(value: &Json) -> String {
    canonical::to_string(value).expect("JSON values always serialize")
}

fn to_json<T: Serialize>(value: &T) -> Json {
    serde_json::to_value(value).expect("engine types always serialize")
}

fn dispatch(cli: Cli, cwd: &Path, options: Options) -> Result<Output> {
    let root = cli.project.clone();
    if let Command::Init { vistrail_id } = &cli.command {
        let root = root.unwrap_or_else(|| cwd.to_path_buf());
        let p = Project::init(&root, vistrail_id.as_deref(), options)?;
        return Ok(Output::new(
            vec![format!("initialized project {} at {}", p.vistrail().id(), root.display())],
            json!({"root": root, "vistrail_id": p.vistrail().id()}),
        ));
    }
    let root = match root {
        Some(root) => root,
        None => find_root(cwd).ok_or_else(|| {
            AppError::new("NOT_A_PROJECT", format!("{} is not inside a vt project", cwd.display()))
        })?,
    };
    let mut p = Project::open(&root, options)?;
    match cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::AddModule {
            package,
            version,
            name,
            params,
            at,
        } => add_module(&mut p, &at, DescriptorKey::new(&package, &version, &name), &params),
        Command::DeleteModule { id, at } => {
            let parent = parent(&p, &at)?;
            let w = p.workflow(parent)?;
            let id = ModuleId(id);
            if !w.modules.contains_key(&id) {
                return Err(AppError::new("NO_SUCH_MODULE", format!("version {parent} has no module {id}")));
            }
            let mut ops: Vec<PrimitiveOp> = w.incident(id).map(|c| PrimitiveOp::delete_connection(c.id)).collect();
            ops.push(PrimitiveOp::delete_module(id));
            edited(p.append(parent, ops, None, None)?, None)
        }
        Command::Connect { source, target, at } => {
            let parent = parent(&p, &at)?;
            let id = p.vistrail().next_connection_id();
            let conn = Connection::new(id, port_ref(&source)?, port_ref(&target)?);
            let v = p.append(parent, vec![PrimitiveOp::AddConnection(conn)], None, None)?;
            edited(v, Some(("connection", id.0)))
        }
        Command::Disconnect { connection_id, at } => {
            let parent = parent(&p, &at)?;
            edited(p.append(parent, vec![PrimitiveOp::delete_connection(connection_id)], None, None)?, None)
        }
        Command::SetParam {
            module_id,
            name,
            value,
            at,
        } => {
            let parent = parent(&p, &at)?;
            let w = p.workflow(parent)?;
            let ty = param_type(&p, &w, ModuleId(module_id), &name)?;
            let value = parse_value(&p, &value, ty)?;
            let op = PrimitiveOp::set_parameter(module_id, &name, value);
            edited(p.append(parent, vec![op], None, None)?, None)
        }
        Command::Tag { args, remove } => tag(&mut p, &args, remove),
        Command::Annotate { args } => {
            let (v, key, value) = match args.as_slice() {
                [k, val] => (p.head(), k, val),
                [v, k, val] => (p.resolve(v)?, k, val),
                _ => unreachable!("clap enforces 2..=3 values"),
            };
            p.annotate(v, key, value)?;
            Ok(Output::new(
                vec![format!("annotated {v}: {key} = {value}")],
                json!({"version": v, "key": key, "value": value}),
            ))
        }
        Command::Tree => Ok(tree(&p)),
        Command::Checkout { target } => {
            let v = p.resolve(&target)?;
            p.set_head(v)?;
            Ok(Output::new(vec![format!("HEAD is now {v}")], json!({"head": v})))
        }
        Command::Show { version } => {
            let v = version_or_head(&p, version.as_deref())?;
            show(&p, v)
        }
        Command::Diff { from, to } => {
            let (from, to) = (p.resolve(&from)?, p.resolve(&to)?);
            let delta = p.vistrail().diff(from, to)?;
            let mut lines: Vec<String> = Vec::new();
            lines.extend(delta.added_modules.iter().map(|m| format!("+ module {m}")));
            lines.extend(delta.deleted_modules.iter().map(|m| format!("- module {m}")));
            lines.extend(delta.added_connections.iter().map(|c| format!("+ connection {c}")));
            lines.extend(delta.deleted_connections.iter().map(|c| format!("- connection {c}")));
            for change in &delta.parameter_changes {
                let show = |v: &Option<Value>| v.as_ref().map_or("(unset)".to_owned(), ToString::to_string);
                lines.push(format!(
                    "~ {}.{}: {} -> {}",
                    change.module_id,
                    change.name,
                    show(&change.before),
                    show(&change.after)
                ));
            }
            Ok(Output::new(lines, to_json(&delta)))
        }
        Command::Run { version, set } => {
            let v = version_or_head(&p, version.as_deref())?;
            let w = p.workflow(v)?;
            let mut overrides = Overrides::new();
            for item in &set {
                let (target, text) = split_once(item, '=', "ID.PARAM=VALUE")?;
                let (module, param) = split_once(target, '.', "ID.PARAM=VALUE")?;
                let module = ModuleId(parse_id(module)?);
                let ty = param_type(&p, &w, module, param)?;
                overrides.insert((module, param.to_owned()), parse_value(&p, text, ty)?);
            }
            let log = p.run(v, &overrides)?;
            Ok(report_run(&w, &log))
        }
        Command::Log { version, status } => {
            let filter = LogFilter {
                version: version.map(|v| p.resolve(&v)).transpose()?,
                status,
                ..LogFilter::default()
            };
            let logs = p.runs().query(&filter);
            let lines = logs
                .iter()
                .map(|l| {
                    format!(
                        "{} version {} {} {} {}",
                        l.exec_id,
                        l.version,
                        label(&l.status),
                        l.started_at.format(seconds::FORMAT),
                        l.note
                    )
                    .trim_end()
                    .to_owned()
                })
                .collect();
            Ok(Output::new(lines, json!({"executions": logs})))
        }
        Command::Upgrade {
            version,
            apply,
            allow_partial,
        } => {
            let v = version_or_head(&p, version.as_deref())?;
            let (plan, new) = p.upgrade(v, apply, allow_partial)?;
            let mut lines: Vec<String> = plan
                .rewrites
                .iter()
                .map(|r| format!("rewrite module {}: {} -> {}", r.module_id, r.rule.source_key(), r.rule.target_key()))
                .collect();
            lines.extend(plan.blocked.iter().map(|b| format!("blocked module {}: {}", b.module_id, b.reason)));
            if plan.is_empty() {
                lines.push(format!("version {v} is up to date"));
            }
            if let Some(new) = new {
                lines.push(format!("version {new}"));
            }
            Ok(Output::new(lines, json!({"plan": plan, "version": new})))
        }
        Command::Mashup(cmd) => mashup(&mut p, cmd),
        Command::Data(cmd) => data(&mut p, cmd),
        Command::Packages(PackagesCommand::List) => {
            let lines = p
                .registry()
                .packages()
                .map(|pkg| format!("{} {} ({} modules)", pkg.package_id, pkg.package_version, pkg.descriptors.len()))
                .collect();
            let list: Vec<Json> = p
                .registry()
                .packages()
                .map(|pkg| {
                    json!({
                        "package_id": pkg.package_id,
                        "package_version": pkg.package_version,
                        "modules": pkg.descriptors.iter().map(|d| &d.module_name).collect::<Vec<_>>(),
                    })
                })
                .collect();
            Ok(Output::new(lines, json!({"packages": list})))
        }
        Command::Packages(PackagesCommand::Load { file }) => {
            let text = fs::read_to_string(&file)?;
            let pkg = p.load_package(&text)?;
            Ok(Output::new(
                vec![format!("loaded {} {}", pkg.package_id, pkg.package_version)],
                json!({"package_id": pkg.package_id, "package_version": pkg.package_version}),
            ))
        }
        Command::Serve { port } => {
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            server::serve_blocking(p, addr)?;
            Ok(Output::default())
        }
    }
}

fn parent(p: &Project, at: &At) -> Result<VersionId> {
    version_or_head(p, at.at.as_deref())
}

fn version_or_head(p: &Project, text: Option<&str>) -> Result<VersionId> {
    match text {
        Some(t) => p.resolve(t),
        None => Ok(p.head()),
    }
}

fn edited(v: VersionId, created: Option<(&str, u64)>) -> Result<Output> {
    Ok(match created {
        Some((what, id)) => Output::new(vec![format!("version {v}, {what} {id}")], json!({"version": v, what: id})),
        None => Output::new(vec![format!("version {v}")], json!({"version": v})),
    })
}

fn add_module(p: &mut Project, at: &At, key: DescriptorKey, params: &[String]) -> Result<Output> {
    let parent = parent(p, at)?;
    let desc = p.registry().lookup(&key)?.clone();
    let id = p.vistrail().next_module_id();
    let mut module = ModuleInstance::new(id, key);
    for item in params {
        let (name, text) = split_once(item, '=', "NAME=VALUE")?;
        let spec = desc
            .param(name)
            .ok_or_else(|| AppError::new("BAD_PARAM", format!("{} has no parameter {name:?}", desc.key())))?;
        module = module.with_param(name, parse_value(p, text, spec.value_type)?);
    }
    let v = p.append(parent, vec![PrimitiveOp::AddModule(module)], None, None)?;
    edited(v, Some(("module", id.0)))
}

fn tag(p: &mut Project, args: &[String], remove: bool) -> Result<Output> {
    if remove {
        let [name] = args else {
            return Err(AppError::bad_request("tag --remove takes only NAME"));
        };
        let v = p.untag(name)?;
        return Ok(Output::new(
            vec![format!("removed tag {name} from {v}")],
            json!({"version": v, "name": name, "removed": true}),
        ));
    }
    let (v, name) = match args {
        [name] => (p.head(), name),
        [v, name] => (p.resolve(v)?, name),
        _ => unreachable!("clap enforces 1..=2 values"),
    };
    p.tag(v, name)?;
    Ok(Output::new(vec![format!("tagged {v} as {name}")], json!({"version": v, "name": name})))
}

fn tree(p: &Project) -> Output {
    let nodes = p.vistrail().version_tree();
    let mut children: BTreeMap<Option<VersionId>, Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        children.entry(n.parent).or_default().push(i);
    }
    let mut lines = Vec::new();
    // Depth-first, children in id order.
    let mut stack: Vec<(usize, usize)> = children.get(&None).into_iter().flatten().rev().map(|&i| (i, 0)).collect();
    while let Some((i, depth)) = stack.pop() {
        let n = &nodes[i];
        let mut line = format!("{}{}", "  ".repeat(depth), n.id);
        if n.id == p.head() {
            line.push_str(" *");
        }
        if let (Some(user), Some(at)) = (&n.user, &n.timestamp) {
            line.push_str(&format!(" {user} {}", at.format(seconds::FORMAT)));
        }
        if let Some(note) = n.note.as_deref().filter(|s| !s.is_empty()) {
            line.push_str(&format!(" {note}"));
        }
        if !n.tags.is_empty() {
            line.push_str(&format!(" [{}]", n.tags.join(", ")));
        }
        lines.push(line);
        if let Some(kids) = children.get(&Some(n.id)) {
            stack.extend(kids.iter().rev().map(|&k| (k, depth + 1)));
        }
    }
    Output::new(lines, json!({"versions": nodes, "head": p.head()}))
}

fn show(p: &Project, v: VersionId) -> Result<Output> {
    let w = p.workflow(v)?;
    let report = p.validate(v)?;
    let mut lines = vec![format!("version {v}")];
    for m in w.modules.values() {
        let params: Vec<String> = m.parameters.iter().map(|(k, val)| format!("{k}={val}")).collect();
        lines.push(format!("module {} {} {}", m.id, m.descriptor, params.join(" ")).trim_end().to_owned());
    }
    for c in w.connections.values() {
        lines.push(format!("connection {} {} -> {}", c.id, c.source, c.target));
    }
    lines.extend(report.violations.iter().map(|x| format!("invalid: {}: {}", x.code, x.detail)));
    Ok(Output::new(
        lines,
        json!({"version": v, "workflow": w, "violations": report.violations}),
    ))
}

/// Sink outputs are the ones nothing downstream consumes.
fn report_run(w: &Workflow, log: &ExecutionLog) -> Output {
    let sinks: Vec<ModuleId> = w
        .modules
        .keys()
        .copied()
        .filter(|&m| !w.connections.values().any(|c| c.source.module == m))
        .collect();
    let mut lines = vec![format!("execution {} {}", log.exec_id, label(&log.status))];
    for m in &sinks {
        let Some(entry) = log.module(*m) else { continue };
        for (port, value) in &entry.outputs {
            if sinks.len() == 1 {
                lines.push(format!("{port} = {value}"));
            } else {
                lines.push(format!("{m}.{port} = {value}"));
            }
        }
    }
    for entry in &log.module_executions {
        if let Some(error) = &entry.error {
            lines.push(format!("module {} {}: {error}", entry.module_id, label(&entry.status)));
        }
    }
    Output {
        lines,
        json: json!({"exec_id": log.exec_id, "status": log.status, "log": log}),
        raw: None,
        exit: if log.status == ExecutionStatus::Success { 0 } else { 1 },
    }
}

fn mashup(p: &mut Project, cmd: MashupCommand) -> Result<Output> {
    match cmd {
        MashupCommand::Create {
            title,
            aliases,
            choices,
            at,
        } => {
            let v = parent(p, &at)?;
            let w = p.workflow(v)?;
            let mut choice_map: BTreeMap<&str, &str> = BTreeMap::new();
            for item in &choices {
                let (name, list) = split_once(item, '=', "NAME=V1,V2")?;
                choice_map.insert(name, list);
            }
            let mut built = Vec::new();
            for item in &aliases {
                let (name, target) = split_once(item, '=', "NAME=MODULE.PARAM[:DEFAULT]")?;
                let (target, default) = match target.split_once(':') {
                    Some((t, d)) => (t, Some(d)),
                    None => (target, None),
                };
                let (module, param) = split_once(target, '.', "NAME=MODULE.PARAM[:DEFAULT]")?;
                let module = ModuleId(parse_id(module)?);
                let ty = param_type(p, &w, module, param)?;
                let default = match default {
                    Some(text) => parse_value(p, text, ty)?,
                    None => current_value(p, &w, module, param)?,
                };
                let mut alias = Alias::new(name, module, param, default);
                if let Some(list) = choice_map.remove(name) {
                    let values = list.split(',').map(|t| parse_value(p, t, ty)).collect::<Result<_>>()?;
                    alias = alias.with_choices(values);
                }
                built.push(alias);
            }
            if let Some(name) = choice_map.keys().next() {
                return Err(AppError::new("UNKNOWN_ALIAS", format!("--choices names undeclared alias {name:?}")));
            }
            let id = p.create_mashup(v, &title, built)?;
            Ok(Output::new(vec![format!("mashup {id}")], json!({"mashup_id": id})))
        }
        MashupCommand::List => {
            let mashups = p.vistrail().mashups();
            let lines = mashups
                .values()
                .map(|m| {
                    let names: Vec<&str> = m.aliases.iter().map(|a| a.alias.as_str()).collect();
                    format!("{} version {} {:?} [{}]", m.mashup_id, m.version, m.title, names.join(", "))
                })
                .collect();
            Ok(Output::new(lines, json!({"mashups": mashups.values().collect::<Vec<_>>()})))
        }
        MashupCommand::Run { mashup_id, bindings } => {
            let mashup = p
                .vistrail()
                .mashups()
                .get(&mashup_id)
                .cloned()
                .ok_or_else(|| AppError::new("UNKNOWN_MASHUP", format!("unknown mashup {mashup_id}")))?;
            let w = p.workflow(mashup.version)?;
            let mut bound = BTreeMap::new();
            for item in &bindings {
                let (name, text) = split_once(item, '=', "ALIAS=VALUE")?;
                let alias = mashup
                    .alias(name)
                    .ok_or_else(|| AppError::new("UNKNOWN_ALIAS", format!("mashup has no alias {name:?}")))?;
                let ty = param_type(p, &w, alias.module_id, &alias.param_name)?;
                bound.insert(name.to_owned(), parse_value(p, text, ty)?);
            }
            let log = p.run_mashup(&mashup_id, &bound)?;
            Ok(report_run(&w, &log))
        }
    }
}

fn data(p: &mut Project, cmd: DataCommand) -> Result<Output> {
    let show = |r: &vt_core::DataRef| {
        let mut line = format!("{} {}", r.content_hash, r.size_bytes);
        if let Some(name) = &r.name {
            line.push_str(&format!(" {name}"));
        }
        line
    };
    match cmd {
        DataCommand::Put { file, name, version_of } => {
            let bytes = if file.as_os_str() == "-" {
                let mut buf = Vec::new();
                io::stdin().read_to_end(&mut buf)?;
                buf
            } else {
                fs::read(&file)?
            };
            let pred = version_of.as_deref().map(ContentHash::parse).transpose()?;
            let r = p.put_data(&bytes, name.as_deref(), pred.as_ref())?;
            Ok(Output::new(vec![show(&r)], to_json(&r)))
        }
        DataCommand::Get { hash, output } => {
            let bytes = p.data().get(&ContentHash::parse(&hash)?)?;
            match output {
                Some(path) => {
                    canonical::write_atomic(&path, &bytes)?;
                    Ok(Output::new(
                        vec![format!("wrote {} bytes to {}", bytes.len(), path.display())],
                        json!({"hash": hash, "size": bytes.len(), "path": path}),
                    ))
                }
                None => Ok(Output {
                    raw: Some(bytes),
                    ..Output::default()
                }),
            }
        }
        DataCommand::Versions { hash } => {
            let chain = p.data().history(&ContentHash::parse(&hash)?)?;
            Ok(Output::new(chain.iter().map(show).collect(), json!({"versions": chain})))
        }
    }
}

fn split_once<'a>(text: &'a str, sep: char, shape: &str) -> Result<(&'a str, &'a str)> {
    text.split_once(sep)
        .filter(|(a, _)| !a.is_empty())
        .ok_or_else(|| AppError::bad_request(format!("expected {shape}, got {text:?}")))
}

fn parse_id(text: &str) -> Result<u64> {
    text.parse().map_err(|_| AppError::bad_request(format!("not an id: {text:?}")))
}

fn port_ref(text: &str) -> Result<PortRef> {
    let (module, port) = split_once(text, '.', "ID.PORT")?;
    Ok(PortRef::new(parse_id(module)?, port))
}

/// The declared type of a module's parameter.
fn param_type(p: &Project, w: &Workflow, module: ModuleId, name: &str) -> Result<ValueType> {
    let m = w
        .modules
        .get(&module)
        .ok_or_else(|| AppError::new("NO_SUCH_MODULE", format!("no module {module} in this version")))?;
    let desc = p.registry().lookup(&m.descriptor)?;
    desc.param(name)
        .map(|s| s.value_type)
        .ok_or_else(|| AppError::new("BAD_PARAM", format!("{} has no parameter {name:?}", m.descriptor)))
}

fn current_value(p: &Project, w: &Workflow, module: ModuleId, name: &str) -> Result<Value> {
    let m = &w.modules[&module];
    if let Some(v) = m.parameters.get(name) {
        return Ok(v.clone());
    }
    p.registry()
        .lookup(&m.descriptor)?
        .param(name)
        .and_then(|s| s.default.clone())
        .ok_or_else(|| AppError::bad_request(format!("{module}.{name} has no value; give the alias a :DEFAULT")))
}

/// Text to a value of `ty`. Dataref parameters take a stored hash.
fn parse_value(p: &Project, text: &str, ty: ValueType) -> Result<Value> {
    if ty == ValueType::DataRef {
        let hash = ContentHash::parse(text)?;
        return p
            .data()
            .get_ref(&hash)
            .cloned()
            .map(Value::DataRef)
            .ok_or_else(|| AppError::new("NOT_FOUND", format!("no stored data {hash}")));
    }
    Value::parse_as(text, ty).ok_or_else(|| AppError::new("BAD_VALUE", format!("{text:?} is not a valid {ty}")))
}

fn label<T: Serialize>(value: &T) -> String {
    match to_json(value) {
        Json::String(s) => s,
        other => other.to_string(),
    }
}
