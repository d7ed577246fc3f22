// SPDX-License-Identifier: Apache-2.0

//! Executes materialized workflow versions and records what happened.
//!
//! Modules run one at a time in (topological rank, module id) order, which is
//! also the order of entries in the resulting [`ExecutionLog`]. A module whose
//! upstream failed or was skipped is itself skipped.

pub mod modules;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::datastore::DataStore;
use crate::model::{topological_ranks, DescriptorKey, ModuleId};
use crate::provenance::{Clock, ProvenanceError, VersionId, Vistrail};
use crate::registry::PackageRegistry;
use crate::validate::{validate_workflow, ValidationReport};
use crate::value::Value;

pub use modules::{run_module, ModuleError, ModuleOutput, ToolInvocation};

/// Parameter overrides keyed by `(module, parameter)`.
pub type Overrides = BTreeMap<(ModuleId, String), Value>;

#[derive(Debug, Clone, Default)]
pub struct EngineConfig {
    /// `ExternalTool` refuses to run unless this is set.
    pub allow_external_tools: bool,
    pub clock: Clock,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("UNKNOWN_VERSION({0})")]
    UnknownVersion(VersionId),
    #[error("VALIDATION_FAILED: {0}")]
    ValidationFailed(ValidationReport),
    #[error("BAD_OVERRIDE: {0}")]
    BadOverride(String),
    #[error(transparent)]
    Provenance(ProvenanceError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownVersion(_) => "UNKNOWN_VERSION",
            EngineError::ValidationFailed(_) => "VALIDATION_FAILED",
            EngineError::BadOverride(_) => "BAD_OVERRIDE",
            EngineError::Provenance(e) => e.code(),
        }
    }
}

impl From<ProvenanceError> for EngineError {
    fn from(e: ProvenanceError) -> Self {
        match e {
            ProvenanceError::UnknownVersion(v) => EngineError::UnknownVersion(v),
            other => EngineError::Provenance(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionStatus {
    Success,
    Failed,
    /// Not produced by the sequential engine; kept so that logs written by
    /// interrupted runs remain representable.
    Partial,
}

impl std::str::FromStr for ExecutionStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(ExecutionStatus::Success),
            "failed" => Ok(ExecutionStatus::Failed),
            "partial" => Ok(ExecutionStatus::Partial),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleStatus {
    Success,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleExecution {
    pub module_id: ModuleId,
    pub descriptor_key: DescriptorKey,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: ModuleStatus,
    pub resolved_params: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, Value>,
    pub error: Option<String>,
    pub tool: Option<ToolInvocation>,
}

impl ModuleExecution {
    /// Equality on recorded values, ignoring timestamps.
    pub fn same_result(&self, other: &ModuleExecution) -> bool {
        self.module_id == other.module_id
            && self.descriptor_key == other.descriptor_key
            && self.status == other.status
            && self.resolved_params == other.resolved_params
            && self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.error == other.error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionLog {
    pub exec_id: String,
    pub vistrail_id: String,
    pub version: VersionId,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: ExecutionStatus,
    /// Free text; mashup runs record `mashup:<id>` here.
    pub note: String,
    pub module_executions: Vec<ModuleExecution>,
}

impl ExecutionLog {
    pub fn module(&self, id: ModuleId) -> Option<&ModuleExecution> {
        self.module_executions.iter().find(|m| m.module_id == id)
    }

    /// Equality ignoring exec id, timestamps and note.
    pub fn same_result(&self, other: &ExecutionLog) -> bool {
        self.vistrail_id == other.vistrail_id
            && self.version == other.version
            && self.status == other.status
            && self.module_executions.len() == other.module_executions.len()
            && self
                .module_executions
                .iter()
                .zip(&other.module_executions)
                .all(|(a, b)| a.same_result(b))
    }

    /// Every dataref in any parameter, input or output.
    pub fn datarefs(&self) -> impl Iterator<Item = &crate::datastore::DataRef> {
        self.module_executions.iter().flat_map(|m| {
            m.resolved_params
                .values()
                .chain(m.inputs.values())
                .chain(m.outputs.values())
                .filter_map(Value::as_dataref)
        })
    }
}

/// Runs version `v` of `vt`.
///
/// Parameters resolve as overrides, then stored values, then descriptor
/// defaults. Module failures are recorded in the log; only an invalid
/// workflow or bad override is an error.
pub fn execute(
    vt: &Vistrail,
    v: VersionId,
    registry: &PackageRegistry,
    store: &mut DataStore,
    overrides: &Overrides,
    config: &EngineConfig,
) -> Result<ExecutionLog, EngineError> {
    let started_at = config.clock.now();
    let workflow = vt.materialize(v)?;
    let report = validate_workflow(&workflow, registry);
    if !report.is_valid() {
        return Err(EngineError::ValidationFailed(report));
    }
    for ((module_id, name), value) in overrides {
        let desc = workflow
            .modules
            .get(module_id)
            .and_then(|m| registry.lookup(&m.descriptor).ok())
            .ok_or_else(|| EngineError::BadOverride(format!("no module {module_id}")))?;
        let spec = desc
            .param(name)
            .ok_or_else(|| EngineError::BadOverride(format!("module {module_id} has no parameter {name:?}")))?;
        if !value.conforms_to(spec.value_type) {
            return Err(EngineError::BadOverride(format!(
                "{module_id}.{name} expects {}",
                spec.value_type
            )));
        }
    }

    let ranks = topological_ranks(&workflow).expect("validated workflows are acyclic");
    let mut order: Vec<ModuleId> = workflow.modules.keys().copied().collect();
    order.sort_by_key(|id| (ranks[id], *id));

    let mut produced: BTreeMap<ModuleId, BTreeMap<String, Value>> = BTreeMap::new();
    let mut not_ok: BTreeSet<ModuleId> = BTreeSet::new();
    let mut entries = Vec::with_capacity(order.len());

    for id in order {
        let module = &workflow.modules[&id];
        let desc = registry
            .lookup(&module.descriptor)
            .expect("validated descriptors resolve");
        let module_started = config.clock.now();
        let mut entry = ModuleExecution {
            module_id: id,
            descriptor_key: module.descriptor.clone(),
            started_at: module_started,
            finished_at: module_started,
            status: ModuleStatus::Skipped,
            resolved_params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            error: None,
            tool: None,
        };

        if workflow.inbound(id).any(|c| not_ok.contains(&c.source.module)) {
            not_ok.insert(id);
            entries.push(entry);
            continue;
        }

        for spec in &desc.parameters {
            let chosen = overrides
                .get(&(id, spec.name.clone()))
                .or_else(|| module.parameters.get(&spec.name))
                .or(spec.default.as_ref());
            if let Some(value) = chosen.and_then(|v| v.coerce(spec.value_type)) {
                entry.resolved_params.insert(spec.name.clone(), value);
            }
        }

        let mut input_error = None;
        for conn in workflow.inbound(id) {
            let port_type = desc
                .input(&conn.target.port)
                .expect("validated ports exist")
                .port_type;
            let upstream = produced
                .get(&conn.source.module)
                .and_then(|outs| outs.get(&conn.source.port));
            match upstream.and_then(|v| v.coerce(port_type)) {
                Some(value) => {
                    entry.inputs.insert(conn.target.port.clone(), value);
                }
                None => {
                    input_error = Some(match upstream {
                        None => format!("MISSING_INPUT: {} produced no value", conn.source),
                        Some(v) => format!(
                            "TYPE_MISMATCH: {} expects {port_type}, got {}",
                            conn.target.port,
                            v.value_type()
                        ),
                    });
                }
            }
        }

        let result = match input_error {
            Some(message) => Err(ModuleError {
                message,
                tool: None,
            }),
            None => run_module(desc, &entry.inputs, &entry.resolved_params, store, config),
        };
        match result {
            Ok(out) => {
                entry.status = ModuleStatus::Success;
                entry.tool = out.tool;
                entry.outputs = out.outputs;
                produced.insert(id, entry.outputs.clone());
            }
            Err(err) => {
                entry.status = ModuleStatus::Failed;
                entry.tool = err.tool;
                entry.error = Some(format!("MODULE_ERROR: {}", err.message));
                not_ok.insert(id);
            }
        }
        entry.finished_at = config.clock.now();
        entries.push(entry);
    }

    let status = if entries.iter().all(|e| e.status == ModuleStatus::Success) {
        ExecutionStatus::Success
    } else {
        ExecutionStatus::Failed
    };
    Ok(ExecutionLog {
        exec_id: uuid::Uuid::new_v4().to_string(),
        vistrail_id: vt.id().to_owned(),
        version: v,
        started_at,
        finished_at: config.clock.now(),
        status,
        note: String::new(),
        module_executions: entries,
    })
}

/// Which logs [`ExecutionStore::query`] returns. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogFilter {
    pub version: Option<VersionId>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    pub status: Option<ExecutionStatus>,
}

impl LogFilter {
    pub fn matches(&self, log: &ExecutionLog) -> bool {
        self.version.map_or(true, |v| log.version == v)
            && self.since.map_or(true, |t| log.started_at >= t)
            && self.until.map_or(true, |t| log.started_at <= t)
            && self.status.map_or(true, |s| log.status == s)
    }
}

#[derive(Debug, Error)]
pub enum ExecutionStoreError {
    #[error("DUPLICATE_EXECUTION: {0}")]
    Duplicate(String),
    #[error("FORMAT_ERROR: {0}")]
    Format(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] io::Error),
}

/// Append-only collection of execution logs, optionally mirrored to one
/// canonical JSON file per run.
#[derive(Debug, Default)]
pub struct ExecutionStore {
    dir: Option<PathBuf>,
    logs: Vec<ExecutionLog>,
}

impl ExecutionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `<exec_id>.json` under `dir`, creating it if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ExecutionStoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut logs = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let log: ExecutionLog = serde_json::from_str(&text)
                .map_err(|e| ExecutionStoreError::Format(format!("{}: {e}", path.display())))?;
            logs.push(log);
        }
        Ok(ExecutionStore {
            dir: Some(dir),
            logs,
        })
    }

    pub fn append(&mut self, log: ExecutionLog) -> Result<(), ExecutionStoreError> {
        if self.get(&log.exec_id).is_some() {
            return Err(ExecutionStoreError::Duplicate(log.exec_id));
        }
        if let Some(dir) = &self.dir {
            let text = canonical::to_string(&log)
                .map_err(|e| ExecutionStoreError::Format(e.to_string()))?;
            canonical::write_atomic(&dir.join(format!("{}.json", log.exec_id)), text.as_bytes())?;
        }
        self.logs.push(log);
        Ok(())
    }

    pub fn get(&self, exec_id: &str) -> Option<&ExecutionLog> {
        self.logs.iter().find(|l| l.exec_id == exec_id)
    }

    pub fn len(&self) -> usize {
        self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logs.is_empty()
    }

    /// Matching logs ordered by start time, then exec id.
    pub fn query(&self, filter: &LogFilter) -> Vec<&ExecutionLog> {
        let mut hits: Vec<&ExecutionLog> = self.logs.iter().filter(|l| filter.matches(l)).collect();
        hits.sort_by(|a, b| {
            a.started_at
                .cmp(&b.started_at)
                .then_with(|| a.exec_id.cmp(&b.exec_id))
        });
        hits
    }
}
