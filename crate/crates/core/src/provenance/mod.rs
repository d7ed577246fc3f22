// SPDX-License-Identifier: Apache-2.0

//! The vistrail: an append-only tree of edit actions.
//!
//! Version `0` is the empty workflow and has no action record. Every other
//! version is created by exactly one [`Action`], whose id doubles as the
//! version id. Workflows are never stored; [`Vistrail::materialize`] rebuilds
//! them by replaying the actions on the path from the root.

mod diff;
mod file;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mashup::Mashup;
use crate::model::{ModuleId, OpError, PrimitiveOp, Workflow};

pub use diff::{ParameterChange, VersionDelta};
pub use file::FORMAT_VERSION;

/// Identifies a workflow version. `0` is the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionId(pub u64);

impl VersionId {
    pub const ROOT: VersionId = VersionId(0);

    pub fn is_root(self) -> bool {
        self.0 == 0
    }
}

impl From<u64> for VersionId {
    fn from(id: u64) -> Self {
        VersionId(id)
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Source of action and data timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Always reports the same instant. Used to make recorded sessions
    /// byte-reproducible.
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(at) => *at,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProvenanceError {
    #[error("UNKNOWN_VERSION({0})")]
    UnknownVersion(VersionId),
    #[error("INVALID_OPS({index}, {reason})")]
    InvalidOps { index: usize, reason: String },
    #[error("UNKNOWN_TAG({0})")]
    UnknownTag(String),
    #[error("BAD_TAG: tag names must be non-empty")]
    EmptyTag,
    #[error("REPLAY_FAILED at version {version}: {source}")]
    Replay { version: VersionId, source: OpError },
    #[error("FORMAT_ERROR({location}): {message}")]
    Format { location: String, message: String },
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

impl ProvenanceError {
    pub fn code(&self) -> &'static str {
        match self {
            ProvenanceError::UnknownVersion(_) => "UNKNOWN_VERSION",
            ProvenanceError::InvalidOps { .. } => "INVALID_OPS",
            ProvenanceError::UnknownTag(_) => "UNKNOWN_TAG",
            ProvenanceError::EmptyTag => "BAD_TAG",
            ProvenanceError::Replay { .. } => "REPLAY_FAILED",
            ProvenanceError::Format { .. } => "FORMAT_ERROR",
            ProvenanceError::Io(_) => "IO_ERROR",
        }
    }
}

/// One immutable edit step. Equality ignores the timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub id: VersionId,
    pub parent: VersionId,
    #[serde(with = "crate::canonical::seconds")]
    pub timestamp: DateTime<Utc>,
    pub user: String,
    pub note: String,
    pub ops: Vec<PrimitiveOp>,
}

impl PartialEq for Action {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.parent == other.parent
            && self.user == other.user
            && self.note == other.note
            && self.ops == other.ops
    }
}

/// One row of [`Vistrail::version_tree`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionNode {
    pub id: VersionId,
    pub parent: Option<VersionId>,
    #[serde(skip_serializing_if = "Option::is_none", with = "optional_seconds")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub tags: Vec<String>,
}

mod optional_seconds {
    use chrono::{DateTime, Utc};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(at: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match at {
            Some(at) => crate::canonical::seconds::serialize(at, s),
            None => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vistrail {
    id: String,
    actions: BTreeMap<VersionId, Action>,
    next_action_id: u64,
    next_module_id: u64,
    next_connection_id: u64,
    tags: BTreeMap<String, VersionId>,
    annotations: BTreeMap<VersionId, BTreeMap<String, String>>,
    pub(crate) mashups: BTreeMap<String, Mashup>,
}

impl Default for Vistrail {
    fn default() -> Self {
        Self::new()
    }
}

impl Vistrail {
    /// A fresh vistrail holding only the empty root version.
    pub fn new() -> Self {
        Self::with_id(uuid::Uuid::new_v4().to_string())
    }

    pub fn with_id(id: impl Into<String>) -> Self {
        Vistrail {
            id: id.into(),
            actions: BTreeMap::new(),
            next_action_id: 1,
            next_module_id: 1,
            next_connection_id: 1,
            tags: BTreeMap::new(),
            annotations: BTreeMap::new(),
            mashups: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.actions.values()
    }

    pub fn action(&self, v: VersionId) -> Option<&Action> {
        self.actions.get(&v)
    }

    pub fn tags(&self) -> &BTreeMap<String, VersionId> {
        &self.tags
    }

    pub fn annotations(&self, v: VersionId) -> Option<&BTreeMap<String, String>> {
        self.annotations.get(&v)
    }

    pub fn mashups(&self) -> &BTreeMap<String, Mashup> {
        &self.mashups
    }

    /// The id the next appended action will receive.
    pub fn next_version_id(&self) -> VersionId {
        VersionId(self.next_action_id)
    }

    /// Smallest module id that has never been used on any branch.
    pub fn next_module_id(&self) -> ModuleId {
        ModuleId(self.next_module_id)
    }

    pub fn next_connection_id(&self) -> crate::model::ConnectionId {
        crate::model::ConnectionId(self.next_connection_id)
    }

    pub fn contains(&self, v: VersionId) -> bool {
        v.is_root() || self.actions.contains_key(&v)
    }

    fn require(&self, v: VersionId) -> Result<(), ProvenanceError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(ProvenanceError::UnknownVersion(v))
        }
    }

    /// Number of versions, including the root.
    pub fn len(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn parent(&self, v: VersionId) -> Option<VersionId> {
        self.actions.get(&v).map(|a| a.parent)
    }

    pub fn children(&self, v: VersionId) -> impl Iterator<Item = VersionId> + '_ {
        self.actions
            .values()
            .filter(move |a| a.parent == v)
            .map(|a| a.id)
    }

    /// Versions from the root down to `v`, both inclusive.
    pub fn path_to(&self, v: VersionId) -> Result<Vec<VersionId>, ProvenanceError> {
        self.require(v)?;
        let mut path = vec![v];
        let mut cursor = v;
        while let Some(parent) = self.parent(cursor) {
            path.push(parent);
            cursor = parent;
        }
        path.reverse();
        Ok(path)
    }

    /// Lowest common ancestor of two versions.
    pub fn lca(&self, a: VersionId, b: VersionId) -> Result<VersionId, ProvenanceError> {
        let ancestors: BTreeSet<VersionId> = self.path_to(a)?.into_iter().collect();
        let path_b = self.path_to(b)?;
        Ok(path_b
            .into_iter()
            .rev()
            .find(|v| ancestors.contains(v))
            .unwrap_or(VersionId::ROOT))
    }

    /// Resolves a version number or tag name.
    pub fn resolve(&self, text: &str) -> Result<VersionId, ProvenanceError> {
        if let Some(&v) = self.tags.get(text) {
            return Ok(v);
        }
        match text.parse::<u64>() {
            Ok(n) => {
                let v = VersionId(n);
                self.require(v)?;
                Ok(v)
            }
            Err(_) => Err(ProvenanceError::UnknownTag(text.to_owned())),
        }
    }

    /// Records `ops` as a new child of `parent`, stamped with the current time.
    pub fn append_action(
        &mut self,
        parent: VersionId,
        ops: Vec<PrimitiveOp>,
        user: &str,
        note: &str,
    ) -> Result<VersionId, ProvenanceError> {
        self.append_action_at(parent, ops, user, note, Utc::now())
    }

    /// Records `ops` as a new child of `parent`.
    ///
    /// The ops must apply in order to the materialized parent, and every added
    /// module or connection must use an id at or above the vistrail's counter
    /// (ids are never reused, even across branches). Nothing is recorded on
    /// failure.
    pub fn append_action_at(
        &mut self,
        parent: VersionId,
        ops: Vec<PrimitiveOp>,
        user: &str,
        note: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<VersionId, ProvenanceError> {
        self.require(parent)?;
        if ops.is_empty() {
            return Err(ProvenanceError::InvalidOps {
                index: 0,
                reason: "EMPTY: an action needs at least one op".into(),
            });
        }
        let mut workflow = self.materialize(parent)?;
        let mut next_module = self.next_module_id;
        let mut next_connection = self.next_connection_id;
        for (index, op) in ops.iter().enumerate() {
            let fresh = match op {
                PrimitiveOp::AddModule(m) => check_fresh(m.id.0, &mut next_module),
                PrimitiveOp::AddConnection(c) => check_fresh(c.id.0, &mut next_connection),
                _ => Ok(()),
            };
            fresh
                .and_then(|()| workflow.apply(op).map_err(|e| e.to_string()))
                .map_err(|reason| ProvenanceError::InvalidOps { index, reason })?;
        }

        let id = VersionId(self.next_action_id);
        self.actions.insert(
            id,
            Action {
                id,
                parent,
                timestamp: crate::canonical::seconds::truncate(timestamp),
                user: user.to_owned(),
                note: note.to_owned(),
                ops,
            },
        );
        self.next_action_id += 1;
        self.next_module_id = next_module;
        self.next_connection_id = next_connection;
        Ok(id)
    }

    /// Rebuilds the workflow at `v` by replaying every action from the root.
    pub fn materialize(&self, v: VersionId) -> Result<Workflow, ProvenanceError> {
        let mut workflow = Workflow::new();
        for step in self.path_to(v)?.into_iter().skip(1) {
            self.replay_onto(&mut workflow, step)?;
        }
        Ok(workflow)
    }

    pub(crate) fn replay_onto(
        &self,
        workflow: &mut Workflow,
        v: VersionId,
    ) -> Result<(), ProvenanceError> {
        for op in &self.actions[&v].ops {
            workflow
                .apply(op)
                .map_err(|source| ProvenanceError::Replay { version: v, source })?;
        }
        Ok(())
    }

    /// Points `name` at `v`, moving it if it already names another version.
    /// Tags are metadata: no version is created.
    pub fn tag(&mut self, v: VersionId, name: &str) -> Result<(), ProvenanceError> {
        self.require(v)?;
        if name.is_empty() {
            return Err(ProvenanceError::EmptyTag);
        }
        self.tags.insert(name.to_owned(), v);
        Ok(())
    }

    pub fn untag(&mut self, name: &str) -> Result<VersionId, ProvenanceError> {
        self.tags
            .remove(name)
            .ok_or_else(|| ProvenanceError::UnknownTag(name.to_owned()))
    }

    pub fn annotate(&mut self, v: VersionId, key: &str, value: &str) -> Result<(), ProvenanceError> {
        self.require(v)?;
        self.annotations
            .entry(v)
            .or_default()
            .insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    /// One entry per version, root first, sorted by id.
    pub fn version_tree(&self) -> Vec<VersionNode> {
        let mut tags: BTreeMap<VersionId, Vec<String>> = BTreeMap::new();
        for (name, v) in &self.tags {
            tags.entry(*v).or_default().push(name.clone());
        }
        let mut nodes = vec![VersionNode {
            id: VersionId::ROOT,
            parent: None,
            timestamp: None,
            user: None,
            note: None,
            tags: tags.remove(&VersionId::ROOT).unwrap_or_default(),
        }];
        nodes.extend(self.actions.values().map(|a| VersionNode {
            id: a.id,
            parent: Some(a.parent),
            timestamp: Some(a.timestamp),
            user: Some(a.user.clone()),
            note: Some(a.note.clone()),
            tags: tags.remove(&a.id).unwrap_or_default(),
        }));
        nodes
    }
}

fn check_fresh(id: u64, next: &mut u64) -> Result<(), String> {
    if id < *next {
        return Err(format!("ID_REUSED: id {id} is below the next free id {next}"));
    }
    *next = id + 1;
    Ok(())
}
