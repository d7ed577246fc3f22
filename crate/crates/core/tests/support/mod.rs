// SPDX-License-Identifier: Apache-2.0

//! Random action trees and a naive replay oracle.
//!
//! The oracle keeps modules and connections in plain vectors and re-applies
//! every op from the root with its own checks. It shares nothing with
//! `Workflow::apply` beyond the op and instance types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vt_core::{builtin, Connection, ModuleInstance, PortRef, PrimitiveOp, Value, Vistrail, Workflow};

/// One generated action: its parent version and ops. Step `i` creates
/// version `i + 1`.
#[derive(Debug, Clone)]
pub struct Step {
    pub parent: u64,
    pub ops: Vec<PrimitiveOp>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NaiveWorkflow {
    pub modules: Vec<ModuleInstance>,
    pub connections: Vec<Connection>,
}

impl NaiveWorkflow {
    fn module_pos(&self, id: u64) -> Option<usize> {
        self.modules.iter().position(|m| m.id.0 == id)
    }

    fn connection_pos(&self, id: u64) -> Option<usize> {
        self.connections.iter().position(|c| c.id.0 == id)
    }

    pub fn apply(&mut self, op: &PrimitiveOp) -> Result<(), String> {
        match op {
            PrimitiveOp::AddModule(m) => {
                if self.module_pos(m.id.0).is_some() {
                    return Err(format!("module {} exists", m.id));
                }
                self.modules.push(m.clone());
            }
            PrimitiveOp::DeleteModule { module_id } => {
                let pos = self.module_pos(module_id.0).ok_or("no module")?;
                if self
                    .connections
                    .iter()
                    .any(|c| c.source.module == *module_id || c.target.module == *module_id)
                {
                    return Err("module still connected".into());
                }
                self.modules.remove(pos);
            }
            PrimitiveOp::AddConnection(c) => {
                if self.connection_pos(c.id.0).is_some() {
                    return Err(format!("connection {} exists", c.id));
                }
                if self.module_pos(c.source.module.0).is_none() || self.module_pos(c.target.module.0).is_none() {
                    return Err("dangling endpoint".into());
                }
                self.connections.push(c.clone());
            }
            PrimitiveOp::DeleteConnection { connection_id } => {
                let pos = self.connection_pos(connection_id.0).ok_or("no connection")?;
                self.connections.remove(pos);
            }
            PrimitiveOp::SetParameter {
                module_id,
                name,
                value,
            } => {
                let pos = self.module_pos(module_id.0).ok_or("no module")?;
                self.modules[pos].parameters.insert(name.clone(), value.clone());
            }
        }
        Ok(())
    }

    pub fn to_workflow(&self) -> Workflow {
        let mut w = Workflow::new();
        for m in &self.modules {
            w.modules.insert(m.id, m.clone());
        }
        for c in &self.connections {
            w.connections.insert(c.id, c.clone());
        }
        w
    }
}

/// Root-to-`v` path computed from the parent links alone.
pub fn oracle_path(steps: &[Step], v: u64) -> Vec<u64> {
    let mut path = vec![v];
    let mut at = v;
    while at != 0 {
        at = steps[(at - 1) as usize].parent;
        path.push(at);
    }
    path.reverse();
    path
}

/// Materializes `v` by re-applying every op on the path from scratch.
pub fn oracle_materialize(steps: &[Step], v: u64) -> Result<NaiveWorkflow, String> {
    let mut w = NaiveWorkflow::default();
    for version in oracle_path(steps, v).into_iter().skip(1) {
        for op in &steps[(version - 1) as usize].ops {
            w.apply(op)?;
        }
    }
    Ok(w)
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..4) {
        0 => Value::Integer(rng.gen_range(-1000..1000)),
        // Dyadic fractions keep the values exact through any JSON round trip.
        1 => Value::Float(rng.gen_range(-4096..4096) as f64 / 64.0),
        2 => Value::String(["", "a", "xyz", "line\nbreak", "ünï"][rng.gen_range(0..5)].to_owned()),
        _ => Value::Boolean(rng.gen()),
    }
}

const PARAM_NAMES: [&str; 4] = ["value", "column", "command_template", "extra"];

fn random_ops(
    rng: &mut ChaCha8Rng,
    state: &mut NaiveWorkflow,
    next_module: &mut u64,
    next_connection: &mut u64,
) -> Vec<PrimitiveOp> {
    let package = builtin::basic_v1();
    let mut ops = Vec::new();
    let wanted = rng.gen_range(1..=4);
    while ops.len() < wanted {
        let kind = rng.gen_range(0..5);
        let op = match kind {
            0 => {
                let name = *builtin::MODULE_NAMES.choose(rng).expect("non-empty");
                let mut m = builtin::instance(*next_module, name);
                if rng.gen_bool(0.5) {
                    m = m.with_param(PARAM_NAMES.choose(rng).expect("non-empty"), random_value(rng));
                }
                *next_module += 1;
                PrimitiveOp::AddModule(m)
            }
            1 => {
                let Some(m) = state.modules.choose(rng) else { continue };
                let id = m.id;
                // One gesture: drop the module's connections, then the module.
                let incident: Vec<u64> = state
                    .connections
                    .iter()
                    .filter(|c| c.source.module == id || c.target.module == id)
                    .map(|c| c.id.0)
                    .collect();
                for c in incident {
                    let op = PrimitiveOp::delete_connection(c);
                    state.apply(&op).expect("generator tracks state");
                    ops.push(op);
                }
                PrimitiveOp::delete_module(id)
            }
            2 => {
                let (Some(src), Some(dst)) = (state.modules.choose(rng), state.modules.choose(rng)) else {
                    continue;
                };
                let out_port = package
                    .descriptor(&src.descriptor.module_name)
                    .and_then(|d| d.output_ports.choose(rng))
                    .map_or("out".to_owned(), |p| p.name.clone());
                let in_port = package
                    .descriptor(&dst.descriptor.module_name)
                    .and_then(|d| d.input_ports.choose(rng))
                    .map_or("in".to_owned(), |p| p.name.clone());
                let c = Connection::new(
                    *next_connection,
                    PortRef::new(src.id, &out_port),
                    PortRef::new(dst.id, &in_port),
                );
                *next_connection += 1;
                PrimitiveOp::AddConnection(c)
            }
            3 => {
                let Some(c) = state.connections.choose(rng) else { continue };
                PrimitiveOp::delete_connection(c.id)
            }
            _ => {
                let Some(m) = state.modules.choose(rng) else { continue };
                PrimitiveOp::set_parameter(m.id, PARAM_NAMES.choose(rng).expect("non-empty"), random_value(rng))
            }
        };
        state.apply(&op).expect("generator only emits applicable ops");
        ops.push(op);
    }
    ops
}

/// A random tree of at most `max_actions` actions where no version has more
/// than `max_children` children.
pub fn random_tree(rng: &mut ChaCha8Rng, max_actions: usize, max_children: usize) -> Vec<Step> {
    let count = rng.gen_range(1..=max_actions);
    let mut steps: Vec<Step> = Vec::with_capacity(count);
    let mut children: BTreeMap<u64, usize> = BTreeMap::new();
    let mut states: Vec<NaiveWorkflow> = vec![NaiveWorkflow::default()];
    let (mut next_module, mut next_connection) = (1u64, 1u64);
    for _ in 0..count {
        let open: Vec<u64> = (0..states.len() as u64)
            .filter(|v| children.get(v).copied().unwrap_or(0) < max_children)
            .collect();
        // Favor recent versions so trees grow deep as well as wide.
        let parent = if rng.gen_bool(0.6) {
            *open.last().expect("the newest version has no children")
        } else {
            *open.choose(rng).expect("non-empty")
        };
        let mut state = states[parent as usize].clone();
        let ops = random_ops(rng, &mut state, &mut next_module, &mut next_connection);
        *children.entry(parent).or_default() += 1;
        states.push(state);
        steps.push(Step { parent, ops });
    }
    steps
}

/// Records `steps` into a fresh vistrail.
pub fn build_vistrail(steps: &[Step]) -> Vistrail {
    let mut vt = Vistrail::new();
    for (i, step) in steps.iter().enumerate() {
        let v = vt
            .append_action(step.parent.into(), step.ops.clone(), "prop", "generated")
            .unwrap_or_else(|e| panic!("step {i} rejected: {e}"));
        assert_eq!(v.0, i as u64 + 1);
    }
    vt
}

/// Diff by direct set comparison of two materialized workflows.
#[derive(Debug, Default, PartialEq)]
pub struct BruteDelta {
    pub added_modules: BTreeSet<u64>,
    pub deleted_modules: BTreeSet<u64>,
    pub parameter_changes: Vec<(u64, String, Option<Value>, Option<Value>)>,
    pub shared_modules: BTreeSet<u64>,
    pub added_connections: BTreeSet<u64>,
    pub deleted_connections: BTreeSet<u64>,
}

pub fn brute_diff(from: &NaiveWorkflow, to: &NaiveWorkflow) -> BruteDelta {
    let ids = |w: &NaiveWorkflow| w.modules.iter().map(|m| m.id.0).collect::<BTreeSet<_>>();
    let conns = |w: &NaiveWorkflow| w.connections.iter().map(|c| c.id.0).collect::<BTreeSet<_>>();
    let (a, b) = (ids(from), ids(to));
    let (ca, cb) = (conns(from), conns(to));
    let mut changes = Vec::new();
    for id in a.intersection(&b) {
        let pa = &from.modules.iter().find(|m| m.id.0 == *id).expect("present").parameters;
        let pb = &to.modules.iter().find(|m| m.id.0 == *id).expect("present").parameters;
        let names: BTreeSet<&String> = pa.keys().chain(pb.keys()).collect();
        for name in names {
            if pa.get(name) != pb.get(name) {
                changes.push((*id, name.clone(), pa.get(name).cloned(), pb.get(name).cloned()));
            }
        }
    }
    BruteDelta {
        added_modules: b.difference(&a).copied().collect(),
        deleted_modules: a.difference(&b).copied().collect(),
        parameter_changes: changes,
        shared_modules: a.intersection(&b).copied().collect(),
        added_connections: cb.difference(&ca).copied().collect(),
        deleted_connections: ca.difference(&cb).copied().collect(),
    }
}

pub fn engine_delta_as_brute(d: &vt_core::VersionDelta) -> BruteDelta {
    BruteDelta {
        added_modules: d.added_modules.iter().map(|m| m.0).collect(),
        deleted_modules: d.deleted_modules.iter().map(|m| m.0).collect(),
        parameter_changes: d
            .parameter_changes
            .iter()
            .map(|c| (c.module_id.0, c.name.clone(), c.before.clone(), c.after.clone()))
            .collect(),
        shared_modules: d.shared_modules.iter().map(|m| m.0).collect(),
        added_connections: d.added_connections.iter().map(|c| c.0).collect(),
        deleted_connections: d.deleted_connections.iter().map(|c| c.0).collect(),
    }
}
