// SPDX-License-Identifier: Apache-2.0

//! A project directory and the operations both surfaces share.
//!
//! ```text
//! <root>/project.vtj     the vistrail
//! <root>/data/           content-addressed data store
//! <root>/runs/           one execution log per run
//! <root>/packages/       extra package manifests, loaded on open
//! <root>/config.json     {allow_external_tools, default_user}
//! <root>/HEAD            current version for the CLI
//! <root>/.lock           present while a writer holds the project
//! ```
//!
//! Every mutating method persists before returning.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use vt_core::engine::ExecutionStore;
use vt_core::mashup::execute_mashup;
use vt_core::upgrade::{apply_upgrade, compute_upgrade, ApplyOptions, UpgradePlan};
use vt_core::{
    canonical, execute, validate_workflow, Alias, Clock, ContentHash, DataRef, DataStore, EngineConfig,
    ExecutionLog, Overrides, Package, PackageRegistry, PrimitiveOp, ValidationReport, Value, VersionId, Vistrail,
    Workflow,
};

use crate::error::{unknown_version, AppError, Result};

pub const VISTRAIL_FILE: &str = "project.vtj";
pub const DEFAULT_NOTE: &str = "user-edit";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub allow_external_tools: bool,
    pub default_user: String,
}

/// Settings taken from the environment rather than the project.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub clock: Clock,
    /// Overrides `config.default_user`.
    pub user: Option<String>,
}

impl Options {
    /// Reads `VT_USER` and `VT_FIXED_TIME` (RFC 3339). The latter pins every
    /// recorded timestamp, which makes sessions byte-reproducible.
    pub fn from_env() -> Result<Self> {
        let clock = match std::env::var("VT_FIXED_TIME") {
            Ok(text) => Clock::Fixed(
                DateTime::parse_from_rfc3339(&text)
                    .map_err(|e| AppError::bad_request(format!("VT_FIXED_TIME: {e}")))?
                    .with_timezone(&Utc),
            ),
            Err(_) => Clock::System,
        };
        let user = std::env::var("VT_USER").ok().filter(|u| !u.is_empty());
        Ok(Options { clock, user })
    }
}

/// Exclusive hold on a project, released on drop.
#[derive(Debug)]
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(root: &Path) -> Result<Lock> {
        let path = root.join(".lock");
        for attempt in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut file) => {
                    writeln!(file, "{}", std::process::id())?;
                    return Ok(Lock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if attempt == 0 && holder_is_gone(&path) {
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    return Err(AppError::new(
                        "LOCKED",
                        format!("project is locked by process {}", holder.trim()),
                    ));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(AppError::new("LOCKED", "project is locked"))
    }
}

/// True only when the lock names a process that provably no longer exists.
fn holder_is_gone(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc = Path::new("/proc");
    proc.is_dir() && !proc.join(pid.to_string()).exists()
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Project {
    root: PathBuf,
    vt: Vistrail,
    registry: PackageRegistry,
    data: DataStore,
    runs: ExecutionStore,
    config: Config,
    head: VersionId,
    options: Options,
    _lock: Lock,
}

/// Walks up from `start` to the nearest directory holding a project.
pub fn find_root(start: &Path) -> Option<PathBuf> {
    start
        .ancestors()
        .find(|dir| dir.join(VISTRAIL_FILE).is_file())
        .map(Path::to_path_buf)
}

impl Project {
    /// Creates a project at `root`. `vistrail_id` defaults to a random UUID.
    pub fn init(root: &Path, vistrail_id: Option<&str>, options: Options) -> Result<Project> {
        if root.join(VISTRAIL_FILE).exists() {
            return Err(AppError::new(
                "ALREADY_INITIALIZED",
                format!("{} already holds a project", root.display()),
            ));
        }
        if let Some(id) = vistrail_id {
            uuid::Uuid::parse_str(id).map_err(|e| AppError::bad_request(format!("vistrail id: {e}")))?;
        }
        for dir in ["data", "runs", "packages"] {
            fs::create_dir_all(root.join(dir))?;
        }
        let lock = Lock::acquire(root)?;
        let config = Config {
            allow_external_tools: false,
            default_user: std::env::var("USER").unwrap_or_else(|_| "anonymous".to_owned()),
        };
        write_canonical(&root.join("config.json"), &config)?;
        let vt = match vistrail_id {
            Some(id) => Vistrail::with_id(id),
            None => Vistrail::new(),
        };
        vt.save(&root.join(VISTRAIL_FILE))?;
        canonical::write_atomic(&root.join("HEAD"), b"0\n")?;
        drop(lock);
        Project::open(root, options)
    }

    pub fn open(root: &Path, options: Options) -> Result<Project> {
        let vtj = root.join(VISTRAIL_FILE);
        if !vtj.is_file() {
            return Err(AppError::new(
                "NOT_A_PROJECT",
                format!("no {VISTRAIL_FILE} in {}", root.display()),
            ));
        }
        let lock = Lock::acquire(root)?;
        let vt = Vistrail::load(&vtj).map_err(|e| AppError::new("PROJECT_CORRUPT", e.to_string()))?;
        let config: Config = serde_json::from_str(&fs::read_to_string(root.join("config.json"))?)
            .map_err(|e| AppError::new("PROJECT_CORRUPT", format!("config.json: {e}")))?;

        let mut registry = PackageRegistry::with_builtins();
        let mut manifests: Vec<PathBuf> = fs::read_dir(root.join("packages"))?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        manifests.sort();
        for path in manifests.iter().filter(|p| p.extension().is_some_and(|e| e == "pkgj")) {
            registry.register(Package::load_manifest(path)?)?;
        }

        let head = fs::read_to_string(root.join("HEAD"))
            .ok()
            .and_then(|t| t.trim().parse::<u64>().ok())
            .map(VersionId)
            .filter(|v| vt.contains(*v))
            .unwrap_or(VersionId::ROOT);
        let data = DataStore::open(root.join("data"))?.with_clock(options.clock);
        let runs = ExecutionStore::open(root.join("runs"))?;
        Ok(Project {
            root: root.to_path_buf(),
            vt,
            registry,
            data,
            runs,
            config,
            head,
            options,
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vistrail(&self) -> &Vistrail {
        &self.vt
    }

    pub fn registry(&self) -> &PackageRegistry {
        &self.registry
    }

    pub fn data(&self) -> &DataStore {
        &self.data
    }

    pub fn runs(&self) -> &ExecutionStore {
        &self.runs
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn head(&self) -> VersionId {
        self.head
    }

    pub fn user(&self) -> &str {
        self.options.user.as_deref().unwrap_or(&self.config.default_user)
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.options.clock.now()
    }

    /// A version number or tag name.
    pub fn resolve(&self, text: &str) -> Result<VersionId> {
        Ok(self.vt.resolve(text)?)
    }

    pub fn require(&self, v: VersionId) -> Result<()> {
        if self.vt.contains(v) {
            Ok(())
        } else {
            Err(unknown_version(v))
        }
    }

    pub fn set_head(&mut self, v: VersionId) -> Result<()> {
        self.require(v)?;
        canonical::write_atomic(&self.root.join("HEAD"), format!("{v}\n").as_bytes())?;
        self.head = v;
        Ok(())
    }

    fn save(&self) -> Result<()> {
        Ok(self.vt.save(&self.root.join(VISTRAIL_FILE))?)
    }

    pub fn workflow(&self, v: VersionId) -> Result<Workflow> {
        Ok(self.vt.materialize(v)?)
    }

    pub fn validate(&self, v: VersionId) -> Result<ValidationReport> {
        Ok(validate_workflow(&self.workflow(v)?, &self.registry))
    }

    /// Appends an action under `parent` and moves HEAD to it.
    pub fn append(
        &mut self,
        parent: VersionId,
        ops: Vec<PrimitiveOp>,
        user: Option<&str>,
        note: Option<&str>,
    ) -> Result<VersionId> {
        let user = user.unwrap_or(self.user()).to_owned();
        let now = self.now();
        let v = self
            .vt
            .append_action_at(parent, ops, &user, note.unwrap_or(DEFAULT_NOTE), now)?;
        self.save()?;
        self.set_head(v)?;
        Ok(v)
    }

    pub fn tag(&mut self, v: VersionId, name: &str) -> Result<()> {
        self.vt.tag(v, name)?;
        self.save()
    }

    pub fn untag(&mut self, name: &str) -> Result<VersionId> {
        let v = self.vt.untag(name)?;
        self.save()?;
        Ok(v)
    }

    pub fn annotate(&mut self, v: VersionId, key: &str, value: &str) -> Result<()> {
        self.vt.annotate(v, key, value)?;
        self.save()
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            allow_external_tools: self.config.allow_external_tools,
            clock: self.options.clock,
        }
    }

    /// Executes `v` and records the log under `runs/`.
    pub fn run(&mut self, v: VersionId, overrides: &Overrides) -> Result<ExecutionLog> {
        let config = self.engine_config();
        let log = execute(&self.vt, v, &self.registry, &mut self.data, overrides, &config)?;
        self.runs.append(log.clone())?;
        Ok(log)
    }

    /// Plans an upgrade of `v` and, when `apply` is set, appends it.
    pub fn upgrade(
        &mut self,
        v: VersionId,
        apply: bool,
        allow_partial: bool,
    ) -> Result<(UpgradePlan, Option<VersionId>)> {
        let plan = compute_upgrade(&self.vt, v, &self.registry)?;
        if !apply {
            return Ok((plan, None));
        }
        let options = ApplyOptions {
            allow_partial,
            user: self.user().to_owned(),
            timestamp: self.now(),
        };
        let new = apply_upgrade(&mut self.vt, v, &plan, &self.registry, &options)?;
        self.save()?;
        self.set_head(new)?;
        Ok((plan, Some(new)))
    }

    pub fn create_mashup(&mut self, v: VersionId, title: &str, aliases: Vec<Alias>) -> Result<String> {
        let id = self.vt.create_mashup(v, title, aliases, &self.registry)?;
        self.save()?;
        Ok(id)
    }

    pub fn run_mashup(&mut self, id: &str, bindings: &BTreeMap<String, Value>) -> Result<ExecutionLog> {
        let config = self.engine_config();
        let log = execute_mashup(&self.vt, id, bindings, &self.registry, &mut self.data, &config)?;
        self.runs.append(log.clone())?;
        Ok(log)
    }

    pub fn put_data(&mut self, bytes: &[u8], name: Option<&str>, version_of: Option<&ContentHash>) -> Result<DataRef> {
        Ok(match version_of {
            Some(pred) => self.data.new_version(pred, bytes, name)?,
            None => self.data.put(bytes, name)?,
        })
    }

    /// Registers a package manifest and keeps a canonical copy under
    /// `packages/`.
    pub fn load_package(&mut self, manifest: &str) -> Result<Package> {
        let pkg = Package::from_manifest(manifest)?;
        self.registry.register(pkg.clone())?;
        let file = format!("{}-{}.pkgj", pkg.package_id, pkg.package_version);
        canonical::write_atomic(&self.root.join("packages").join(file), pkg.to_manifest().as_bytes())?;
        Ok(pkg)
    }
}

fn write_canonical<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = canonical::to_string(value).map_err(|e| AppError::new("INTERNAL", e.to_string()))?;
    Ok(canonical::write_atomic(path, text.as_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_open_and_lock() {
        let dir = tempfile::tempdir().unwrap();
        let project = Project::init(dir.path(), None, Options::default()).unwrap();
        assert_eq!(project.head(), VersionId::ROOT);
        for entry in ["project.vtj", "data", "runs", "packages", "config.json", "HEAD", ".lock"] {
            assert!(dir.path().join(entry).exists(), "{entry}");
        }
        let err = Project::open(dir.path(), Options::default()).err().unwrap();
        assert_eq!(err.code, "LOCKED");
        drop(project);
        assert!(!dir.path().join(".lock").exists());
        Project::open(dir.path(), Options::default()).unwrap();
        let err = Project::init(dir.path(), None, Options::default()).err().unwrap();
        assert_eq!(err.code, "ALREADY_INITIALIZED");
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        drop(Project::init(dir.path(), None, Options::default()).unwrap());
        // Above any kernel pid_max, so no such process exists.
        fs::write(dir.path().join(".lock"), "4194304999\n").unwrap();
        if Path::new("/proc").is_dir() {
            Project::open(dir.path(), Options::default()).unwrap();
        }
    }

    #[test]
    fn find_root_walks_up() {
        let dir = tempfile::tempdir().unwrap();
        drop(Project::init(dir.path(), None, Options::default()).unwrap());
        let nested = dir.path().join("runs");
        assert_eq!(find_root(&nested).unwrap(), dir.path());
        assert!(find_root(&std::env::temp_dir().join("definitely-not-a-project")).is_none());
    }

    #[test]
    fn head_follows_appends_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::init(dir.path(), None, Options::default()).unwrap();
        let module = vt_core::builtin::instance(1, "Constant").with_param("value", Value::Integer(2));
        let v = p.append(VersionId::ROOT, vec![PrimitiveOp::AddModule(module)], None, None).unwrap();
        assert_eq!(p.head(), v);
        assert_eq!(p.vistrail().action(v).unwrap().note, DEFAULT_NOTE);
        drop(p);
        let p = Project::open(dir.path(), Options::default()).unwrap();
        assert_eq!(p.head(), v);
        assert_eq!(p.workflow(v).unwrap().modules.len(), 1);
    }
}
