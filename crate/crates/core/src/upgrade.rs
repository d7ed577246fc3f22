// SPDX-License-Identifier: Apache-2.0

//! Moving a workflow version onto newer package versions.
//!
//! An upgrade is an ordinary action appended under the version it upgrades,
//! so the old version stays materializable and nothing in history changes.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Connection, ConnectionId, ModuleId, ModuleInstance, PortRef, PrimitiveOp, Workflow};
use crate::provenance::{ProvenanceError, VersionId, Vistrail};
use crate::registry::{PackageRegistry, PackageVersion, UpgradeRule};
use crate::validate::{validate_workflow, ValidationReport};

pub const NO_RULE: &str = "NO_RULE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rewrite {
    pub module_id: ModuleId,
    /// Composite of every rule along the chosen chain.
    pub rule: UpgradeRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blocked {
    pub module_id: ModuleId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpgradePlan {
    pub version: VersionId,
    /// Sorted by module id, as is `blocked`.
    pub rewrites: Vec<Rewrite>,
    pub blocked: Vec<Blocked>,
}

impl UpgradePlan {
    pub fn is_empty(&self) -> bool {
        self.rewrites.is_empty() && self.blocked.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum UpgradeError {
    #[error("UNKNOWN_VERSION({0})")]
    UnknownVersion(VersionId),
    #[error("PLAN_STALE: {0}")]
    PlanStale(String),
    #[error("BLOCKED_MODULES: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    BlockedModules(Vec<ModuleId>),
    #[error("EMPTY_PLAN: nothing to upgrade")]
    EmptyPlan,
    #[error("UPGRADE_INVALID: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Provenance(ProvenanceError),
}

impl UpgradeError {
    pub fn code(&self) -> &'static str {
        match self {
            UpgradeError::UnknownVersion(_) => "UNKNOWN_VERSION",
            UpgradeError::PlanStale(_) => "PLAN_STALE",
            UpgradeError::BlockedModules(_) => "BLOCKED_MODULES",
            UpgradeError::EmptyPlan => "EMPTY_PLAN",
            UpgradeError::Invalid(_) => "UPGRADE_INVALID",
            UpgradeError::Provenance(e) => e.code(),
        }
    }
}

impl From<ProvenanceError> for UpgradeError {
    fn from(e: ProvenanceError) -> Self {
        match e {
            ProvenanceError::UnknownVersion(v) => UpgradeError::UnknownVersion(v),
            other => UpgradeError::Provenance(other),
        }
    }
}

fn parse_version(text: &str) -> Option<PackageVersion> {
    text.parse().ok()
}

/// Follows rules from `rule`'s target, always taking the rule with the
/// highest target version, until none applies.
fn extend_chain(registry: &PackageRegistry, mut rule: UpgradeRule) -> UpgradeRule {
    loop {
        let key = rule.target_key();
        let next = registry
            .rules_from(&key)
            .filter(|r| parse_version(&r.to.version) > parse_version(&key.package_version))
            .max_by_key(|r| parse_version(&r.to.version))
            .cloned();
        match next {
            Some(next) => rule = rule.then(&next),
            None => return rule,
        }
    }
}

/// Plans an upgrade of every module in `v` whose package has a newer
/// registered version.
pub fn compute_upgrade(vt: &Vistrail, v: VersionId, registry: &PackageRegistry) -> Result<UpgradePlan, UpgradeError> {
    let workflow = vt.materialize(v)?;
    Ok(plan_for(&workflow, v, registry))
}

fn plan_for(workflow: &Workflow, v: VersionId, registry: &PackageRegistry) -> UpgradePlan {
    let mut plan = UpgradePlan {
        version: v,
        rewrites: Vec::new(),
        blocked: Vec::new(),
    };
    for module in workflow.modules.values() {
        let key = &module.descriptor;
        let Some(newest) = registry.newest_version(&key.package_id) else {
            continue;
        };
        let current = parse_version(&key.package_version);
        if current.as_ref() >= Some(newest) {
            continue;
        }
        let first = registry
            .rules_from(key)
            .filter(|r| parse_version(&r.to.version) > current)
            .max_by_key(|r| parse_version(&r.to.version))
            .cloned();
        match first {
            Some(rule) => plan.rewrites.push(Rewrite {
                module_id: module.id,
                rule: extend_chain(registry, rule),
            }),
            None => plan.blocked.push(Blocked {
                module_id: module.id,
                reason: NO_RULE.to_owned(),
            }),
        }
    }
    plan
}

/// Who records an applied upgrade and when.
#[derive(Debug, Clone)]
pub struct ApplyOptions {
    /// Apply the rewrites and leave blocked modules untouched.
    pub allow_partial: bool,
    pub user: String,
    pub timestamp: DateTime<Utc>,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        ApplyOptions {
            allow_partial: false,
            user: String::new(),
            timestamp: Utc::now(),
        }
    }
}

/// The ops that carry out `plan` on `workflow`, allocating ids from the
/// given counters.
pub fn upgrade_ops(
    workflow: &Workflow,
    plan: &UpgradePlan,
    next_module: ModuleId,
    next_connection: ConnectionId,
) -> Vec<PrimitiveOp> {
    let rules: BTreeMap<ModuleId, &UpgradeRule> = plan.rewrites.iter().map(|r| (r.module_id, &r.rule)).collect();
    let mut fresh_module = next_module.0;
    let renumbered: BTreeMap<ModuleId, ModuleId> = rules
        .keys()
        .map(|&old| {
            let new = ModuleId(fresh_module);
            fresh_module += 1;
            (old, new)
        })
        .collect();
    let affected: Vec<&Connection> = workflow
        .connections
        .values()
        .filter(|c| rules.contains_key(&c.source.module) || rules.contains_key(&c.target.module))
        .collect();

    let mut ops = Vec::new();
    ops.extend(affected.iter().map(|c| PrimitiveOp::delete_connection(c.id)));
    ops.extend(rules.keys().map(|&id| PrimitiveOp::delete_module(id)));
    for (old, rule) in &rules {
        let before = &workflow.modules[old];
        let mut module = ModuleInstance::new(renumbered[old], rule.target_key());
        for (name, value) in &before.parameters {
            if let Some(new_name) = rule.map_param(name) {
                module.parameters.insert(new_name.to_owned(), value.clone());
            }
        }
        ops.push(PrimitiveOp::AddModule(module));
    }
    let remap = |end: &PortRef| match rules.get(&end.module) {
        Some(rule) => PortRef::new(renumbered[&end.module], rule.map_port(&end.port)),
        None => end.clone(),
    };
    for (offset, c) in affected.iter().enumerate() {
        ops.push(PrimitiveOp::AddConnection(Connection::new(
            next_connection.0 + offset as u64,
            remap(&c.source),
            remap(&c.target),
        )));
    }
    ops
}

/// Appends one action (note `upgrade`) carrying out `plan` as a child of `v`.
///
/// The plan must still describe `v`, and the upgraded workflow must validate.
pub fn apply_upgrade(
    vt: &mut Vistrail,
    v: VersionId,
    plan: &UpgradePlan,
    registry: &PackageRegistry,
    options: &ApplyOptions,
) -> Result<VersionId, UpgradeError> {
    let workflow = vt.materialize(v)?;
    if plan.version != v {
        return Err(UpgradeError::PlanStale(format!("plan was computed for version {}", plan.version)));
    }
    let mut seen = BTreeSet::new();
    for rw in &plan.rewrites {
        let matches = workflow
            .modules
            .get(&rw.module_id)
            .is_some_and(|m| m.descriptor == rw.rule.source_key());
        if !matches || !seen.insert(rw.module_id) {
            return Err(UpgradeError::PlanStale(format!(
                "module {} is not a {} in version {v}",
                rw.module_id,
                rw.rule.source_key()
            )));
        }
    }
    if !plan.blocked.is_empty() && !options.allow_partial {
        return Err(UpgradeError::BlockedModules(plan.blocked.iter().map(|b| b.module_id).collect()));
    }
    if plan.rewrites.is_empty() {
        return Err(UpgradeError::EmptyPlan);
    }

    let ops = upgrade_ops(&workflow, plan, vt.next_module_id(), vt.next_connection_id());
    let mut upgraded = workflow;
    for op in &ops {
        upgraded
            .apply(op)
            .map_err(|e| UpgradeError::PlanStale(e.to_string()))?;
    }
    let report = validate_workflow(&upgraded, registry);
    if !report.is_valid() {
        return Err(UpgradeError::Invalid(report));
    }
    Ok(vt.append_action_at(v, ops, &options.user, "upgrade", options.timestamp)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::model::DescriptorKey;
    use crate::registry::Package;
    use crate::value::Value;

    fn add_pipeline() -> (Vistrail, VersionId) {
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

    fn both_versions() -> PackageRegistry {
        let mut reg = PackageRegistry::with_builtins();
        reg.register(builtin::basic_v2()).unwrap();
        reg
    }

    #[test]
    fn nothing_newer_means_empty_plan() {
        let (mut vt, v) = add_pipeline();
        let reg = PackageRegistry::with_builtins();
        let plan = compute_upgrade(&vt, v, &reg).unwrap();
        assert!(plan.is_empty());
        let err = apply_upgrade(&mut vt, v, &plan, &reg, &ApplyOptions::default()).unwrap_err();
        assert_eq!(err.code(), "EMPTY_PLAN");
    }

    #[test]
    fn add_pipeline_upgrades_to_two() {
        let (mut vt, v) = add_pipeline();
        let reg = both_versions();
        let plan = compute_upgrade(&vt, v, &reg).unwrap();
        assert_eq!(plan.rewrites.len(), 3);
        assert!(plan.blocked.is_empty());
        let add = plan.rewrites.iter().find(|r| r.module_id == ModuleId(3)).unwrap();
        assert_eq!(add.rule.map_port("out"), "result");

        let up = apply_upgrade(&mut vt, v, &plan, &reg, &ApplyOptions::default()).unwrap();
        assert_eq!(vt.parent(up), Some(v));
        assert_eq!(vt.action(up).unwrap().note, "upgrade");
        let w = vt.materialize(up).unwrap();
        assert!(validate_workflow(&w, &reg).is_valid());
        assert!(w.modules.values().all(|m| m.descriptor.package_version == builtin::V2));
        assert!(w.modules.keys().all(|id| id.0 >= 4), "upgraded modules get fresh ids");
        let new_add = w
            .modules
            .values()
            .find(|m| m.descriptor.module_name == "Add")
            .unwrap()
            .id;
        assert!(w.connections.values().all(|c| c.target.module == new_add));
        assert!(compute_upgrade(&vt, up, &reg).unwrap().rewrites.is_empty());
    }

    #[test]
    fn stale_and_blocked_plans_refused() {
        let (mut vt, v) = add_pipeline();
        let reg = both_versions();
        let plan = compute_upgrade(&vt, v, &reg).unwrap();
        let err = apply_upgrade(&mut vt, VersionId::ROOT, &plan, &reg, &ApplyOptions::default()).unwrap_err();
        assert_eq!(err.code(), "PLAN_STALE");
        let err = apply_upgrade(&mut vt, VersionId(42), &plan, &reg, &ApplyOptions::default()).unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_VERSION");

        let mut blocked = plan.clone();
        let legacy = blocked.rewrites.remove(0);
        blocked.blocked.push(Blocked {
            module_id: legacy.module_id,
            reason: NO_RULE.into(),
        });
        let err = apply_upgrade(&mut vt, v, &blocked, &reg, &ApplyOptions::default()).unwrap_err();
        assert_eq!(err.code(), "BLOCKED_MODULES");
    }

    #[test]
    fn module_without_rule_is_blocked() {
        let mut v1 = builtin::basic_v1();
        v1.package_id = "legacy".into();
        for d in &mut v1.descriptors {
            d.package_id = "legacy".into();
        }
        let mut v2 = v1.clone();
        v2.package_version = "2.0".into();
        for d in &mut v2.descriptors {
            d.package_version = "2.0".into();
        }
        let mut reg = PackageRegistry::new();
        reg.register(v1).unwrap();
        reg.register(v2).unwrap();

        let mut vt = Vistrail::new();
        let v = vt
            .append_action(
                VersionId::ROOT,
                vec![PrimitiveOp::AddModule(
                    ModuleInstance::new(1, DescriptorKey::new("legacy", "1.0", "Constant"))
                        .with_param("value", Value::Integer(1)),
                )],
                "u",
                "n",
            )
            .unwrap();
        let plan = compute_upgrade(&vt, v, &reg).unwrap();
        assert_eq!(
            plan.blocked,
            vec![Blocked {
                module_id: ModuleId(1),
                reason: NO_RULE.into()
            }]
        );
        assert!(plan.rewrites.is_empty());
    }

    #[test]
    fn chains_compose_across_versions() {
        let mut v3: Package = builtin::basic_v2();
        v3.package_version = "3.0".into();
        for d in &mut v3.descriptors {
            d.package_version = "3.0".into();
            for port in &mut d.output_ports {
                if port.name == "result" {
                    port.name = "sum".into();
                }
            }
        }
        v3.upgrade_rules = builtin::MODULE_NAMES
            .iter()
            .map(|name| {
                let mut rule = UpgradeRule::identity(builtin::PACKAGE_ID, "2.0", "3.0", name);
                if *name == "Add" {
                    rule.port_map.insert("result".into(), "sum".into());
                }
                rule
            })
            .collect();
        let mut reg = both_versions();
        reg.register(v3).unwrap();

        let (mut vt, v) = add_pipeline();
        let plan = compute_upgrade(&vt, v, &reg).unwrap();
        let add = plan.rewrites.iter().find(|r| r.module_id == ModuleId(3)).unwrap();
        assert_eq!(add.rule.to.version, "3.0");
        assert_eq!(add.rule.map_port("out"), "sum");
        let up = apply_upgrade(&mut vt, v, &plan, &reg, &ApplyOptions::default()).unwrap();
        assert!(validate_workflow(&vt.materialize(up).unwrap(), &reg).is_valid());
    }
}
