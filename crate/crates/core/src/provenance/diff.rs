// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use serde::Serialize;

use super::{ProvenanceError, VersionId, Vistrail};
use crate::model::{ConnectionId, ModuleId, PrimitiveOp, Workflow};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterChange {
    pub module_id: ModuleId,
    pub name: String,
    /// `None` when the parameter is unset on that side.
    pub before: Option<Value>,
    pub after: Option<Value>,
}

/// Difference between two versions, read from `from` towards `to`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VersionDelta {
    pub added_modules: BTreeSet<ModuleId>,
    pub deleted_modules: BTreeSet<ModuleId>,
    /// Sorted by module id, then parameter name.
    pub parameter_changes: Vec<ParameterChange>,
    pub shared_modules: BTreeSet<ModuleId>,
    pub added_connections: BTreeSet<ConnectionId>,
    pub deleted_connections: BTreeSet<ConnectionId>,
}

impl VersionDelta {
    /// True when nothing differs (shared modules aside).
    pub fn is_empty(&self) -> bool {
        self.added_modules.is_empty()
            && self.deleted_modules.is_empty()
            && self.parameter_changes.is_empty()
            && self.added_connections.is_empty()
            && self.deleted_connections.is_empty()
    }
}

#[derive(Default)]
struct Touched {
    modules: BTreeSet<ModuleId>,
    params: BTreeSet<(ModuleId, String)>,
    connections: BTreeSet<ConnectionId>,
}

impl Touched {
    fn record(&mut self, op: &PrimitiveOp) {
        match op {
            PrimitiveOp::AddModule(m) => {
                self.modules.insert(m.id);
            }
            PrimitiveOp::DeleteModule { module_id } => {
                self.modules.insert(*module_id);
            }
            PrimitiveOp::AddConnection(c) => {
                self.connections.insert(c.id);
            }
            PrimitiveOp::DeleteConnection { connection_id } => {
                self.connections.insert(*connection_id);
            }
            PrimitiveOp::SetParameter {
                module_id, name, ..
            } => {
                self.params.insert((*module_id, name.clone()));
            }
        }
    }
}

impl Vistrail {
    /// Compares two versions using the recorded actions.
    ///
    /// Only the actions between the lowest common ancestor and each version
    /// can introduce differences, so only the ids they touch are compared.
    pub fn diff(&self, from: VersionId, to: VersionId) -> Result<VersionDelta, ProvenanceError> {
        let lca = self.lca(from, to)?;
        let base = self.materialize(lca)?;
        let (left, touched_left) = self.walk_down(base.clone(), lca, from)?;
        let (right, touched_right) = self.walk_down(base, lca, to)?;

        let mut delta = VersionDelta {
            shared_modules: left
                .modules
                .keys()
                .filter(|id| right.modules.contains_key(id))
                .copied()
                .collect(),
            ..VersionDelta::default()
        };

        for id in touched_left.modules.union(&touched_right.modules) {
            match (left.modules.contains_key(id), right.modules.contains_key(id)) {
                (false, true) => {
                    delta.added_modules.insert(*id);
                }
                (true, false) => {
                    delta.deleted_modules.insert(*id);
                }
                _ => {}
            }
        }

        for (id, name) in touched_left.params.union(&touched_right.params) {
            let (Some(l), Some(r)) = (left.modules.get(id), right.modules.get(id)) else {
                continue;
            };
            let before = l.parameters.get(name);
            let after = r.parameters.get(name);
            if before != after {
                delta.parameter_changes.push(ParameterChange {
                    module_id: *id,
                    name: name.clone(),
                    before: before.cloned(),
                    after: after.cloned(),
                });
            }
        }

        for id in touched_left.connections.union(&touched_right.connections) {
            match (
                left.connections.contains_key(id),
                right.connections.contains_key(id),
            ) {
                (false, true) => {
                    delta.added_connections.insert(*id);
                }
                (true, false) => {
                    delta.deleted_connections.insert(*id);
                }
                _ => {}
            }
        }

        Ok(delta)
    }

    fn walk_down(
        &self,
        mut workflow: Workflow,
        ancestor: VersionId,
        v: VersionId,
    ) -> Result<(Workflow, Touched), ProvenanceError> {
        let path = self.path_to(v)?;
        let start = path
            .iter()
            .position(|&p| p == ancestor)
            .expect("ancestor lies on the path");
        let mut touched = Touched::default();
        for &step in &path[start + 1..] {
            for op in &self.actions[&step].ops {
                touched.record(op);
            }
            self.replay_onto(&mut workflow, step)?;
        }
        Ok((workflow, touched))
    }
}
