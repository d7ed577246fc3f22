// SPDX-License-Identifier: Apache-2.0

//! The `.vtj` file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, ProvenanceError, VersionId, Vistrail};
use crate::canonical;
use crate::mashup::Mashup;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Counters {
    action: u64,
    module: u64,
    connection: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VistrailFile {
    format_version: u64,
    vistrail_id: String,
    counters: Counters,
    actions: Vec<Action>,
    tags: BTreeMap<String, VersionId>,
    annotations: BTreeMap<VersionId, BTreeMap<String, String>>,
    mashups: Vec<Mashup>,
}

fn format_error(location: impl Into<String>, message: impl Into<String>) -> ProvenanceError {
    ProvenanceError::Format {
        location: location.into(),
        message: message.into(),
    }
}

impl Vistrail {
    /// Canonical `.vtj` text. Identical vistrails produce identical bytes.
    pub fn to_canonical_json(&self) -> String {
        let file = VistrailFile {
            format_version: FORMAT_VERSION,
            vistrail_id: self.id.clone(),
            counters: Counters {
                action: self.next_action_id,
                module: self.next_module_id,
                connection: self.next_connection_id,
            },
            actions: self.actions.values().cloned().collect(),
            tags: self.tags.clone(),
            annotations: self.annotations.clone(),
            mashups: self.mashups.values().cloned().collect(),
        };
        canonical::to_string(&file).expect("vistrails serialize")
    }

    /// Writes the vistrail to `path` atomically.
    pub fn save(&self, path: &Path) -> Result<(), ProvenanceError> {
        canonical::write_atomic(path, self.to_canonical_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vistrail, ProvenanceError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses `.vtj` text strictly and re-validates every action by replay.
    pub fn from_json(text: &str) -> Result<Vistrail, ProvenanceError> {
        let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            format_error(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(FORMAT_VERSION) => {}
            Some(other) => {
                return Err(format_error(
                    "format_version",
                    format!("unsupported format version {other}"),
                ))
            }
            None => return Err(format_error("format_version", "missing or not an integer")),
        }
        let file: VistrailFile = serde_json::from_str(text).map_err(|e| {
            format_error(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;

        let mut vt = Vistrail::with_id(file.vistrail_id);
        for action in file.actions {
            let location = format!("actions[{}]", action.id);
            if action.id != vt.next_version_id() {
                return Err(format_error(
                    location,
                    format!("expected action id {}", vt.next_version_id()),
                ));
            }
            if action.parent >= action.id {
                return Err(format_error(location, "parent id must be smaller"));
            }
            vt.append_action_at(action.parent, action.ops, &action.user, &action.note, action.timestamp)
                .map_err(|e| format_error(location, e.to_string()))?;
        }

        let counters = file.counters;
        if counters.action != vt.next_action_id
            || counters.module < vt.next_module_id
            || counters.connection < vt.next_connection_id
        {
            return Err(format_error("counters", "counters do not exceed the ids in use"));
        }
        vt.next_module_id = counters.module;
        vt.next_connection_id = counters.connection;

        for (name, v) in file.tags {
            if name.is_empty() || !vt.contains(v) {
                return Err(format_error(format!("tags.{name}"), format!("unknown version {v}")));
            }
            vt.tags.insert(name, v);
        }
        for (v, notes) in file.annotations {
            if !vt.contains(v) {
                return Err(format_error(format!("annotations.{v}"), "unknown version"));
            }
            vt.annotations.insert(v, notes);
        }
        for mashup in file.mashups {
            if !vt.contains(mashup.version) {
                return Err(format_error(
                    format!("mashups.{}", mashup.mashup_id),
                    format!("unknown version {}", mashup.version),
                ));
            }
            if vt.mashups.insert(mashup.mashup_id.clone(), mashup).is_some() {
                return Err(format_error("mashups", "duplicate mashup id"));
            }
        }
        Ok(vt)
    }
}
