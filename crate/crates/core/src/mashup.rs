// SPDX-License-Identifier: Apache-2.0

//! Named parameter views over one pinned workflow version.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::datastore::DataStore;
use crate::engine::{execute, EngineConfig, EngineError, ExecutionLog, Overrides};
use crate::model::ModuleId;
use crate::provenance::{ProvenanceError, VersionId, Vistrail};
use crate::registry::PackageRegistry;
use crate::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alias {
    pub alias: String,
    pub module_id: ModuleId,
    pub param_name: String,
    pub default: Value,
    /// When present, the only values a binding may take.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Value>>,
}

impl Alias {
    pub fn new(alias: &str, module_id: impl Into<ModuleId>, param_name: &str, default: Value) -> Self {
        Alias {
            alias: alias.to_owned(),
            module_id: module_id.into(),
            param_name: param_name.to_owned(),
            default,
            choices: None,
        }
    }

    pub fn with_choices(mut self, choices: Vec<Value>) -> Self {
        self.choices = Some(choices);
        self
    }
}

/// A version pinned by id, never by tag, so later edits cannot change it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mashup {
    pub mashup_id: String,
    pub version: VersionId,
    pub title: String,
    pub aliases: Vec<Alias>,
}

impl Mashup {
    pub fn alias(&self, name: &str) -> Option<&Alias> {
        self.aliases.iter().find(|a| a.alias == name)
    }

    /// Overrides for `bindings`, with unbound aliases at their defaults.
    /// `param_type` gives the declared type of each aliased parameter.
    pub fn overrides(
        &self,
        bindings: &BTreeMap<String, Value>,
        param_type: impl Fn(&Alias) -> Option<ValueType>,
    ) -> Result<Overrides, MashupError> {
        for name in bindings.keys() {
            if self.alias(name).is_none() {
                return Err(MashupError::UnknownAlias(name.clone()));
            }
        }
        let mut overrides = Overrides::new();
        for alias in &self.aliases {
            let value = match bindings.get(&alias.alias) {
                None => alias.default.clone(),
                Some(bound) => {
                    let ty = param_type(alias).unwrap_or_else(|| alias.default.value_type());
                    let value = bound.coerce(ty).ok_or_else(|| {
                        MashupError::BadValue(alias.alias.clone(), format!("expected {ty}"))
                    })?;
                    if let Some(choices) = &alias.choices {
                        if !choices.iter().any(|c| c.coerce(ty).as_ref() == Some(&value)) {
                            return Err(MashupError::BadValue(
                                alias.alias.clone(),
                                format!("{value} is not one of the declared choices"),
                            ));
                        }
                    }
                    value
                }
            };
            overrides.insert((alias.module_id, alias.param_name.clone()), value);
        }
        Ok(overrides)
    }
}

#[derive(Debug, Error)]
pub enum MashupError {
    #[error("UNKNOWN_VERSION({0})")]
    UnknownVersion(VersionId),
    #[error("BAD_ALIAS({0}, {1})")]
    BadAlias(String, String),
    #[error("UNKNOWN_MASHUP({0})")]
    UnknownMashup(String),
    #[error("UNKNOWN_ALIAS({0})")]
    UnknownAlias(String),
    #[error("BAD_VALUE({0}): {1}")]
    BadValue(String, String),
    #[error(transparent)]
    Engine(EngineError),
    #[error(transparent)]
    Provenance(ProvenanceError),
}

impl MashupError {
    pub fn code(&self) -> &'static str {
        match self {
            MashupError::UnknownVersion(_) => "UNKNOWN_VERSION",
            MashupError::BadAlias(..) => "BAD_ALIAS",
            MashupError::UnknownMashup(_) => "UNKNOWN_MASHUP",
            MashupError::UnknownAlias(_) => "UNKNOWN_ALIAS",
            MashupError::BadValue(..) => "BAD_VALUE",
            MashupError::Engine(e) => e.code(),
            MashupError::Provenance(e) => e.code(),
        }
    }
}

impl From<ProvenanceError> for MashupError {
    fn from(e: ProvenanceError) -> Self {
        match e {
            ProvenanceError::UnknownVersion(v) => MashupError::UnknownVersion(v),
            other => MashupError::Provenance(other),
        }
    }
}

impl Vistrail {
    /// Stores a new mashup over `version` and returns its id.
    ///
    /// Ids are derived from the vistrail id and the number of mashups already
    /// stored, so replaying the same edits yields the same ids.
    pub fn create_mashup(
        &mut self,
        version: VersionId,
        title: &str,
        aliases: Vec<Alias>,
        registry: &PackageRegistry,
    ) -> Result<String, MashupError> {
        let workflow = self.materialize(version)?;
        let mut names = BTreeSet::new();
        let mut targets = BTreeSet::new();
        for alias in &aliases {
            let bad = |reason: String| MashupError::BadAlias(alias.alias.clone(), reason);
            if alias.alias.is_empty() {
                return Err(bad("EMPTY".into()));
            }
            if !names.insert(alias.alias.as_str()) {
                return Err(bad("DUPLICATE".into()));
            }
            if !targets.insert((alias.module_id, alias.param_name.as_str())) {
                return Err(bad(format!(
                    "DUPLICATE_TARGET: {}.{} is already aliased",
                    alias.module_id, alias.param_name
                )));
            }
            let module = workflow
                .modules
                .get(&alias.module_id)
                .ok_or_else(|| bad(format!("NO_MODULE: {}", alias.module_id)))?;
            let spec = registry
                .lookup(&module.descriptor)
                .ok()
                .and_then(|d| d.param(&alias.param_name))
                .ok_or_else(|| {
                    bad(format!("NO_PARAM: {} has no parameter {:?}", module.descriptor, alias.param_name))
                })?;
            if !alias.default.conforms_to(spec.value_type) {
                return Err(bad(format!("TYPE_MISMATCH: default must be {}", spec.value_type)));
            }
            if let Some(choices) = &alias.choices {
                if choices.is_empty() {
                    return Err(bad("NO_CHOICES".into()));
                }
                if choices.iter().any(|c| !c.conforms_to(spec.value_type)) {
                    return Err(bad(format!("TYPE_MISMATCH: choices must be {}", spec.value_type)));
                }
                if !choices.contains(&alias.default) {
                    return Err(bad("DEFAULT_NOT_A_CHOICE".into()));
                }
            }
        }

        let namespace = Uuid::parse_str(self.id()).unwrap_or(Uuid::NAMESPACE_OID);
        let mashup_id = Uuid::new_v5(&namespace, format!("mashup:{}", self.mashups.len()).as_bytes()).to_string();
        self.mashups.insert(
            mashup_id.clone(),
            Mashup {
                mashup_id: mashup_id.clone(),
                version,
                title: title.to_owned(),
                aliases,
            },
        );
        Ok(mashup_id)
    }
}

/// Runs a mashup. No version is created; the log's note is `mashup:<id>`.
pub fn execute_mashup(
    vt: &Vistrail,
    mashup_id: &str,
    bindings: &BTreeMap<String, Value>,
    registry: &PackageRegistry,
    store: &mut DataStore,
    config: &EngineConfig,
) -> Result<ExecutionLog, MashupError> {
    let mashup = vt
        .mashups()
        .get(mashup_id)
        .ok_or_else(|| MashupError::UnknownMashup(mashup_id.to_owned()))?;
    let workflow = vt.materialize(mashup.version)?;
    let overrides = mashup.overrides(bindings, |alias| {
        let module = workflow.modules.get(&alias.module_id)?;
        let spec = registry.lookup(&module.descriptor).ok()?.param(&alias.param_name)?;
        Some(spec.value_type)
    })?;
    let mut log = execute(vt, mashup.version, registry, store, &overrides, config).map_err(MashupError::Engine)?;
    log.note = format!("mashup:{mashup_id}");
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::model::{Connection, PortRef, PrimitiveOp};

    fn pipeline() -> (Vistrail, VersionId) {
        let mut vt = Vistrail::new();
        let v = vt
            .append_action(
                VersionId::ROOT,
                vec![
                    PrimitiveOp::AddModule(builtin::instance(1, "Constant").with_param("value", Value::Integer(2))),
                    PrimitiveOp::AddModule(builtin::instance(2, "Constant").with_param("value", Value::Integer(3))),
                    PrimitiveOp::AddModule(builtin::instance(3, "Add")),
                    PrimitiveOp::AddConnection(Connection::new(1, PortRef::new(1, "out"), PortRef::new(3, "a"))),
                    PrimitiveOp::AddConnection(Connection::new(2, PortRef::new(2, "out"), PortRef::new(3, "b"))),
                ],
                "u",
                "n",
            )
            .unwrap();
        (vt, v)
    }

    fn out(log: &ExecutionLog) -> &Value {
        &log.module(ModuleId(3)).unwrap().outputs["out"]
    }

    #[test]
    fn bind_and_run() {
        let (mut vt, v) = pipeline();
        let reg = PackageRegistry::with_builtins();
        let dir = tempfile::tempdir().unwrap();
        let mut store = DataStore::open(dir.path()).unwrap();
        let id = vt
            .create_mashup(v, "sum", vec![Alias::new("x", 1, "value", Value::Integer(2))], &reg)
            .unwrap();
        let cfg = EngineConfig::default();

        let bound = BTreeMap::from([("x".to_owned(), Value::Integer(4))]);
        let log = execute_mashup(&vt, &id, &bound, &reg, &mut store, &cfg).unwrap();
        assert_eq!(out(&log), &Value::Float(7.0));
        assert_eq!(log.note, format!("mashup:{id}"));

        let plain = execute(&vt, v, &reg, &mut store, &Overrides::new(), &cfg).unwrap();
        let unbound = execute_mashup(&vt, &id, &BTreeMap::new(), &reg, &mut store, &cfg).unwrap();
        assert!(unbound.same_result(&plain));
        assert_eq!(vt.len(), 2, "running a mashup creates no version");

        let unknown = BTreeMap::from([("q".to_owned(), Value::Integer(1))]);
        let err = execute_mashup(&vt, &id, &unknown, &reg, &mut store, &cfg).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_ALIAS");
        let err = execute_mashup(&vt, "nope", &BTreeMap::new(), &reg, &mut store, &cfg).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_MASHUP");
    }

    #[test]
    fn alias_validation() {
        let (mut vt, v) = pipeline();
        let reg = PackageRegistry::with_builtins();
        let err = vt
            .create_mashup(v, "t", vec![Alias::new("x", 1, "nope", Value::Integer(2))], &reg)
            .unwrap_err();
        assert_eq!(err.code(), "BAD_ALIAS");
        let err = vt
            .create_mashup(
                v,
                "t",
                vec![
                    Alias::new("x", 1, "value", Value::Integer(2)),
                    Alias::new("x", 2, "value", Value::Integer(3)),
                ],
                &reg,
            )
            .unwrap_err();
        assert!(err.to_string().contains("DUPLICATE"));
        let err = vt
            .create_mashup(VersionId(9), "t", vec![], &reg)
            .unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_VERSION");
        assert!(vt.mashups().is_empty());
    }

    #[test]
    fn choices_are_enforced() {
        let (mut vt, v) = pipeline();
        let reg = PackageRegistry::with_builtins();
        let dir = tempfile::tempdir().unwrap();
        let mut store = DataStore::open(dir.path()).unwrap();
        let alias = Alias::new("x", 1, "value", Value::Integer(2))
            .with_choices(vec![Value::Integer(2), Value::Integer(10)]);
        let id = vt.create_mashup(v, "t", vec![alias], &reg).unwrap();
        let cfg = EngineConfig::default();

        let ok = BTreeMap::from([("x".to_owned(), Value::Integer(10))]);
        let log = execute_mashup(&vt, &id, &ok, &reg, &mut store, &cfg).unwrap();
        assert_eq!(out(&log), &Value::Float(13.0));

        let bad = BTreeMap::from([("x".to_owned(), Value::Integer(4))]);
        let err = execute_mashup(&vt, &id, &bad, &reg, &mut store, &cfg).unwrap_err();
        assert_eq!(err.code(), "BAD_VALUE");
    }

    #[test]
    fn ids_are_deterministic_per_vistrail() {
        let reg = PackageRegistry::with_builtins();
        let (mut a, v) = pipeline();
        let mut b = Vistrail::with_id(a.id());
        b.append_action(
            VersionId::ROOT,
            a.action(v).unwrap().ops.clone(),
            "u",
            "n",
        )
        .unwrap();
        let alias = || vec![Alias::new("x", 1, "value", Value::Integer(2))];
        let first = a.create_mashup(v, "t", alias(), &reg).unwrap();
        assert_eq!(first, b.create_mashup(v, "t", alias(), &reg).unwrap());
        assert_ne!(first, a.create_mashup(v, "t", alias(), &reg).unwrap());
        assert_eq!(Uuid::parse_str(&first).unwrap().get_version_num(), 5);
    }
}
