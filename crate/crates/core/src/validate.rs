// SPDX-License-Identifier: Apache-2.0

//! Semantic validation of a materialized workflow against a registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{topological_order, PortRef, Workflow};
use crate::registry::PackageRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    DanglingEndpoint,
    TypeMismatch,
    Cycle,
    UnknownDescriptor,
    DuplicateInput,
    BadParam,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::DanglingEndpoint => "DANGLING_ENDPOINT",
            ViolationCode::TypeMismatch => "TYPE_MISMATCH",
            ViolationCode::Cycle => "CYCLE",
            ViolationCode::UnknownDescriptor => "UNKNOWN_DESCRIPTOR",
            ViolationCode::DuplicateInput => "DUPLICATE_INPUT",
            ViolationCode::BadParam => "BAD_PARAM",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, detail: String) {
        self.violations.push(Violation { code, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.code, v.detail)?;
        }
        Ok(())
    }
}

/// Lists every violation in `w`. An empty report means the workflow is valid.
pub fn validate_workflow(w: &Workflow, registry: &PackageRegistry) -> ValidationReport {
    let mut report = ValidationReport::default();

    for module in w.modules.values() {
        let Ok(desc) = registry.lookup(&module.descriptor) else {
            report.push(
                ViolationCode::UnknownDescriptor,
                format!("module {} uses unknown {}", module.id, module.descriptor),
            );
            continue;
        };
        for (name, value) in &module.parameters {
            match desc.param(name) {
                None => report.push(
                    ViolationCode::BadParam,
                    format!("module {} has no parameter {name:?}", module.id),
                ),
                Some(spec) if !value.conforms_to(spec.value_type) => report.push(
                    ViolationCode::BadParam,
                    format!(
                        "module {} parameter {name:?} expects {} but holds {}",
                        module.id,
                        spec.value_type,
                        value.value_type()
                    ),
                ),
                Some(_) => {}
            }
        }
    }

    let mut fan_in: BTreeMap<&PortRef, usize> = BTreeMap::new();
    for conn in w.connections.values() {
        *fan_in.entry(&conn.target).or_default() += 1;

        let source = w.modules.get(&conn.source.module);
        let target = w.modules.get(&conn.target.module);
        let (Some(source), Some(target)) = (source, target) else {
            report.push(
                ViolationCode::DanglingEndpoint,
                format!("connection {} references a missing module", conn.id),
            );
            continue;
        };
        let (Ok(sdesc), Ok(tdesc)) = (
            registry.lookup(&source.descriptor),
            registry.lookup(&target.descriptor),
        ) else {
            continue;
        };
        let out = sdesc.output(&conn.source.port);
        let inp = tdesc.input(&conn.target.port);
        match (out, inp) {
            (Some(out), Some(inp)) => {
                if !out.port_type.feeds(inp.port_type) {
                    report.push(
                        ViolationCode::TypeMismatch,
                        format!(
                            "connection {}: {} ({}) cannot feed {} ({})",
                            conn.id, conn.source, out.port_type, conn.target, inp.port_type
                        ),
                    );
                }
            }
            (None, _) => report.push(
                ViolationCode::DanglingEndpoint,
                format!("connection {}: no output port {}", conn.id, conn.source),
            ),
            (_, None) => report.push(
                ViolationCode::DanglingEndpoint,
                format!("connection {}: no input port {}", conn.id, conn.target),
            ),
        }
    }

    for (port, count) in fan_in {
        if count > 1 {
            report.push(
                ViolationCode::DuplicateInput,
                format!("input port {port} has {count} connections"),
            );
        }
    }

    if let Err(cycle) = topological_order(w) {
        report.push(
            ViolationCode::Cycle,
            format!("cycle through module {}", cycle.0),
        );
    }

    report
}
