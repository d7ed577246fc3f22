// SPDX-License-Identifier: Apache-2.0

//! The workflow document: modules, ports, connections and parameters, plus the
//! five primitive edit operations that transform one workflow into another.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{PortType, Value, ValueType};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl From<u64> for $name {
            fn from(id: u64) -> Self {
                $name(id)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Identifies a module instance. Allocated by the vistrail, never reused.
    ModuleId
);
id_type!(
    /// Identifies a connection. Allocated by the vistrail, never reused.
    ConnectionId
);

/// `(package_id, package_version, module_name)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorKey {
    pub package_id: String,
    pub package_version: String,
    pub module_name: String,
}

impl DescriptorKey {
    pub fn new(package_id: &str, package_version: &str, module_name: &str) -> Self {
        DescriptorKey {
            package_id: package_id.to_owned(),
            package_version: package_version.to_owned(),
            module_name: module_name.to_owned(),
        }
    }
}

impl fmt::Display for DescriptorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.package_id, self.package_version, self.module_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub name: String,
    pub port_type: PortType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub value_type: ValueType,
    /// `None` means the parameter must be set explicitly before execution.
    pub default: Option<Value>,
}

/// Static description of a module type: its ports and settable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleDescriptor {
    pub package_id: String,
    pub package_version: String,
    pub module_name: String,
    pub input_ports: Vec<PortSpec>,
    pub output_ports: Vec<PortSpec>,
    pub parameters: Vec<ParamSpec>,
}

impl ModuleDescriptor {
    pub fn key(&self) -> DescriptorKey {
        DescriptorKey::new(&self.package_id, &self.package_version, &self.module_name)
    }

    pub fn input(&self, name: &str) -> Option<&PortSpec> {
        self.input_ports.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&PortSpec> {
        self.output_ports.iter().find(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Checks name uniqueness and that defaults match their declared types.
    pub fn check(&self) -> Result<(), String> {
        fn unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<(), String> {
            let mut seen = BTreeSet::new();
            for name in names {
                if !seen.insert(name) {
                    return Err(format!("duplicate {what} {name:?}"));
                }
            }
            Ok(())
        }
        unique("input port", self.input_ports.iter().map(|p| p.name.as_str()))?;
        unique("output port", self.output_ports.iter().map(|p| p.name.as_str()))?;
        unique("parameter", self.parameters.iter().map(|p| p.name.as_str()))?;
        for p in &self.parameters {
            if let Some(default) = &p.default {
                if default.value_type() != p.value_type && p.value_type != ValueType::Any {
                    return Err(format!(
                        "default of parameter {:?} is {} but declared {}",
                        p.name,
                        default.value_type(),
                        p.value_type
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleInstance {
    pub id: ModuleId,
    pub descriptor: DescriptorKey,
    /// Explicitly set values only; defaults are applied at execution time.
    pub parameters: BTreeMap<String, Value>,
}

impl ModuleInstance {
    pub fn new(id: impl Into<ModuleId>, descriptor: DescriptorKey) -> Self {
        ModuleInstance {
            id: id.into(),
            descriptor,
            parameters: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: Value) -> Self {
        self.parameters.insert(name.to_owned(), value);
        self
    }
}

/// One end of a connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub module: ModuleId,
    pub port: String,
}

impl PortRef {
    pub fn new(module: impl Into<ModuleId>, port: &str) -> Self {
        PortRef {
            module: module.into(),
            port: port.to_owned(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.module, self.port)
    }
}

/// A directed link from an output port to an input port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connection {
    pub id: ConnectionId,
    pub source: PortRef,
    pub target: PortRef,
}

impl Connection {
    pub fn new(id: impl Into<ConnectionId>, source: PortRef, target: PortRef) -> Self {
        Connection {
            id: id.into(),
            source,
            target,
        }
    }

    pub fn touches(&self, module: ModuleId) -> bool {
        self.source.module == module || self.target.module == module
    }
}

/// A materialized workflow. Built by replaying actions; never stored directly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workflow {
    #[serde(with = "by_id::modules")]
    pub modules: BTreeMap<ModuleId, ModuleInstance>,
    #[serde(with = "by_id::connections")]
    pub connections: BTreeMap<ConnectionId, Connection>,
}

/// One atomic edit. Every variant is invertible given the workflow it was
/// applied to (see [`inverse_ops`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveOp {
    AddModule(ModuleInstance),
    DeleteModule {
        module_id: ModuleId,
    },
    AddConnection(Connection),
    DeleteConnection {
        connection_id: ConnectionId,
    },
    SetParameter {
        module_id: ModuleId,
        name: String,
        value: Value,
    },
}

impl PrimitiveOp {
    pub fn kind(&self) -> &'static str {
        match self {
            PrimitiveOp::AddModule(_) => "add_module",
            PrimitiveOp::DeleteModule { .. } => "delete_module",
            PrimitiveOp::AddConnection(_) => "add_connection",
            PrimitiveOp::DeleteConnection { .. } => "delete_connection",
            PrimitiveOp::SetParameter { .. } => "set_parameter",
        }
    }

    pub fn set_parameter(module_id: impl Into<ModuleId>, name: &str, value: Value) -> Self {
        PrimitiveOp::SetParameter {
            module_id: module_id.into(),
            name: name.to_owned(),
            value,
        }
    }

    pub fn delete_module(module_id: impl Into<ModuleId>) -> Self {
        PrimitiveOp::DeleteModule {
            module_id: module_id.into(),
        }
    }

    pub fn delete_connection(connection_id: impl Into<ConnectionId>) -> Self {
        PrimitiveOp::DeleteConnection {
            connection_id: connection_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("OP_NOT_APPLICABLE({id}): {reason}")]
    NotApplicable { id: u64, reason: String },
}

impl OpError {
    pub fn code(&self) -> &'static str {
        "OP_NOT_APPLICABLE"
    }

    fn new(id: u64, reason: impl Into<String>) -> Self {
        OpError::NotApplicable {
            id,
            reason: reason.into(),
        }
    }
}

impl Workflow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty() && self.connections.is_empty()
    }

    /// Connections touching `module`, in id order.
    pub fn incident(&self, module: ModuleId) -> impl Iterator<Item = &Connection> {
        self.connections.values().filter(move |c| c.touches(module))
    }

    /// Connections feeding `module`.
    pub fn inbound(&self, module: ModuleId) -> impl Iterator<Item = &Connection> {
        self.connections
            .values()
            .filter(move |c| c.target.module == module)
    }

    /// Applies `op` in place. On error the workflow is left untouched.
    ///
    /// Only structural applicability is checked here: referenced ids must
    /// exist, added ids must be absent, and a module can only be deleted once
    /// it has no connections. Port names, types and cycles are the business of
    /// [`validate_workflow`](crate::validate_workflow).
    pub fn apply(&mut self, op: &PrimitiveOp) -> Result<(), OpError> {
        match op {
            PrimitiveOp::AddModule(module) => {
                if self.modules.contains_key(&module.id) {
                    return Err(OpError::new(module.id.0, "module id already present"));
                }
                self.modules.insert(module.id, module.clone());
            }
            PrimitiveOp::DeleteModule { module_id } => {
                if !self.modules.contains_key(module_id) {
                    return Err(OpError::new(module_id.0, "no such module"));
                }
                if self.incident(*module_id).next().is_some() {
                    return Err(OpError::new(module_id.0, "module still has connections"));
                }
                self.modules.remove(module_id);
            }
            PrimitiveOp::AddConnection(conn) => {
                if self.connections.contains_key(&conn.id) {
                    return Err(OpError::new(conn.id.0, "connection id already present"));
                }
                for end in [&conn.source, &conn.target] {
                    if !self.modules.contains_key(&end.module) {
                        return Err(OpError::new(end.module.0, "connection endpoint module missing"));
                    }
                }
                self.connections.insert(conn.id, conn.clone());
            }
            PrimitiveOp::DeleteConnection { connection_id } => {
                if self.connections.remove(connection_id).is_none() {
                    return Err(OpError::new(connection_id.0, "no such connection"));
                }
            }
            PrimitiveOp::SetParameter {
                module_id,
                name,
                value,
            } => match self.modules.get_mut(module_id) {
                Some(module) => {
                    module.parameters.insert(name.clone(), value.clone());
                }
                None => return Err(OpError::new(module_id.0, "no such module")),
            },
        }
        Ok(())
    }
}

/// Pure form of [`Workflow::apply`]: `w` is not modified.
pub fn apply_op(w: &Workflow, op: &PrimitiveOp) -> Result<Workflow, OpError> {
    let mut next = w.clone();
    next.apply(op)?;
    Ok(next)
}

/// Ops that undo `op` when applied to `apply_op(pre, op)`.
///
/// Reverting a parameter that was previously unset cannot be expressed with a
/// single `SetParameter`, so that case re-creates the module: its
/// connections are dropped, the module is replaced by its prior state, and the
/// connections are restored.
pub fn inverse_ops(pre: &Workflow, op: &PrimitiveOp) -> Result<Vec<PrimitiveOp>, OpError> {
    let post = apply_op(pre, op)?;
    Ok(match op {
        PrimitiveOp::AddModule(m) => vec![PrimitiveOp::delete_module(m.id)],
        PrimitiveOp::DeleteModule { module_id } => {
            vec![PrimitiveOp::AddModule(pre.modules[module_id].clone())]
        }
        PrimitiveOp::AddConnection(c) => vec![PrimitiveOp::delete_connection(c.id)],
        PrimitiveOp::DeleteConnection { connection_id } => {
            vec![PrimitiveOp::AddConnection(pre.connections[connection_id].clone())]
        }
        PrimitiveOp::SetParameter {
            module_id, name, ..
        } => match pre.modules[module_id].parameters.get(name) {
            Some(old) => vec![PrimitiveOp::set_parameter(*module_id, name, old.clone())],
            None => {
                let incident: Vec<&Connection> = post.incident(*module_id).collect();
                let mut ops: Vec<PrimitiveOp> = incident
                    .iter()
                    .map(|c| PrimitiveOp::delete_connection(c.id))
                    .collect();
                ops.push(PrimitiveOp::delete_module(*module_id));
                ops.push(PrimitiveOp::AddModule(pre.modules[module_id].clone()));
                ops.extend(incident.into_iter().map(|c| PrimitiveOp::AddConnection(c.clone())));
                ops
            }
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("CYCLE: workflow graph contains a cycle through module {0}")]
pub struct CycleError(pub ModuleId);

/// Execution order: every connection's source precedes its target, ties go to
/// the smaller module id.
///
/// Connections whose endpoints are missing are ignored.
pub fn topological_order(w: &Workflow) -> Result<Vec<ModuleId>, CycleError> {
    let (mut indegree, successors) = adjacency(w);
    let mut ready: BTreeSet<ModuleId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut order = Vec::with_capacity(w.modules.len());
    while let Some(id) = ready.pop_first() {
        order.push(id);
        for next in &successors[&id] {
            let d = indegree.get_mut(next).expect("successor is a module");
            *d -= 1;
            if *d == 0 {
                ready.insert(*next);
            }
        }
    }
    if order.len() < w.modules.len() {
        let stuck = indegree
            .iter()
            .find(|(_, &d)| d > 0)
            .map(|(&id, _)| id)
            .expect("some module left with inbound edges");
        return Err(CycleError(stuck));
    }
    Ok(order)
}

/// Longest-path depth of each module from the sources of the graph.
pub fn topological_ranks(w: &Workflow) -> Result<BTreeMap<ModuleId, usize>, CycleError> {
    let order = topological_order(w)?;
    let (_, successors) = adjacency(w);
    let mut rank: BTreeMap<ModuleId, usize> = order.iter().map(|&id| (id, 0)).collect();
    for id in order {
        let r = rank[&id];
        for next in &successors[&id] {
            let slot = rank.get_mut(next).expect("successor is a module");
            *slot = (*slot).max(r + 1);
        }
    }
    Ok(rank)
}

/// Modules reachable from `roots` along connections, excluding the roots.
pub fn descendants(w: &Workflow, roots: &BTreeSet<ModuleId>) -> BTreeSet<ModuleId> {
    let (_, successors) = adjacency(w);
    let mut seen = BTreeSet::new();
    let mut stack: Vec<ModuleId> = roots.iter().copied().collect();
    while let Some(id) = stack.pop() {
        for next in successors.get(&id).into_iter().flatten() {
            if seen.insert(*next) {
                stack.push(*next);
            }
        }
    }
    seen.retain(|id| !roots.contains(id));
    seen
}

type Adjacency = (BTreeMap<ModuleId, usize>, BTreeMap<ModuleId, Vec<ModuleId>>);

fn adjacency(w: &Workflow) -> Adjacency {
    let mut indegree: BTreeMap<ModuleId, usize> = w.modules.keys().map(|&id| (id, 0)).collect();
    let mut successors: BTreeMap<ModuleId, Vec<ModuleId>> =
        w.modules.keys().map(|&id| (id, Vec::new())).collect();
    for c in w.connections.values() {
        let (s, t) = (c.source.module, c.target.module);
        if w.modules.contains_key(&s) && w.modules.contains_key(&t) {
            successors.get_mut(&s).expect("checked").push(t);
            *indegree.get_mut(&t).expect("checked") += 1;
        }
    }
    (indegree, successors)
}

/// Serializes id-keyed maps as arrays in id order.
mod by_id {
    macro_rules! by_id {
        ($name:ident, $key:ty, $value:ty) => {
            pub mod $name {
                use std::collections::BTreeMap;

                use serde::{de::Error, Deserialize, Deserializer, Serializer};

                pub fn serialize<S: Serializer>(
                    map: &BTreeMap<$key, $value>,
                    s: S,
                ) -> Result<S::Ok, S::Error> {
                    s.collect_seq(map.values())
                }

                pub fn deserialize<'de, D: Deserializer<'de>>(
                    d: D,
                ) -> Result<BTreeMap<$key, $value>, D::Error> {
                    let items = Vec::<$value>::deserialize(d)?;
                    let mut map = BTreeMap::new();
                    for item in items {
                        let id = item.id;
                        if map.insert(id, item).is_some() {
                            return Err(D::Error::custom(format!("duplicate id {id}")));
                        }
                    }
                    Ok(map)
                }
            }
        };
    }

    by_id!(modules, crate::model::ModuleId, crate::model::ModuleInstance);
    by_id!(connections, crate::model::ConnectionId, crate::model::Connection);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(id: u64) -> ModuleInstance {
        ModuleInstance::new(id, DescriptorKey::new("seed.basic", "1.0", "Constant"))
    }

    fn conn(id: u64, from: u64, to: u64) -> PrimitiveOp {
        PrimitiveOp::AddConnection(Connection::new(
            id,
            PortRef::new(from, "out"),
            PortRef::new(to, "a"),
        ))
    }

    fn build(ops: &[PrimitiveOp]) -> Workflow {
        let mut w = Workflow::new();
        for op in ops {
            w.apply(op).unwrap();
        }
        w
    }

    #[test]
    fn add_module_to_empty() {
        let w = apply_op(&Workflow::new(), &PrimitiveOp::AddModule(constant(1))).unwrap();
        assert_eq!(w.modules.len(), 1);
        assert_eq!(w.modules[&ModuleId(1)], constant(1));
        assert!(w.connections.is_empty());
    }

    #[test]
    fn delete_missing_module_not_applicable() {
        let err = apply_op(&Workflow::new(), &PrimitiveOp::delete_module(5)).unwrap_err();
        assert!(matches!(err, OpError::NotApplicable { id: 5, .. }));
        assert_eq!(err.code(), "OP_NOT_APPLICABLE");
    }

    #[test]
    fn set_parameter_last_writer_wins() {
        let w = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::set_parameter(1, "value", Value::Integer(3)),
            PrimitiveOp::set_parameter(1, "value", Value::Integer(4)),
        ]);
        assert_eq!(w.modules[&ModuleId(1)].parameters["value"], Value::Integer(4));
    }

    #[test]
    fn apply_op_is_pure() {
        let w = build(&[PrimitiveOp::AddModule(constant(1))]);
        let before = w.clone();
        let _ = apply_op(&w, &PrimitiveOp::delete_module(1)).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn delete_module_refused_while_connected() {
        let w = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::AddModule(constant(2)),
            conn(1, 1, 2),
        ]);
        assert!(apply_op(&w, &PrimitiveOp::delete_module(2)).is_err());
        let w = apply_op(&w, &PrimitiveOp::delete_connection(1)).unwrap();
        assert!(apply_op(&w, &PrimitiveOp::delete_module(2)).is_ok());
    }

    #[test]
    fn connection_to_missing_module_refused() {
        let w = build(&[PrimitiveOp::AddModule(constant(1))]);
        let err = apply_op(&w, &conn(1, 1, 9)).unwrap_err();
        assert!(matches!(err, OpError::NotApplicable { id: 9, .. }));
    }

    #[test]
    fn topo_order_examples() {
        assert!(topological_order(&Workflow::new()).unwrap().is_empty());
        let chain = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::AddModule(constant(2)),
            PrimitiveOp::AddModule(constant(3)),
            conn(1, 1, 2),
            conn(2, 2, 3),
        ]);
        assert_eq!(
            topological_order(&chain).unwrap(),
            vec![ModuleId(1), ModuleId(2), ModuleId(3)]
        );
        let pair = build(&[
            PrimitiveOp::AddModule(constant(7)),
            PrimitiveOp::AddModule(constant(3)),
        ]);
        assert_eq!(topological_order(&pair).unwrap(), vec![ModuleId(3), ModuleId(7)]);
    }

    #[test]
    fn topo_order_reports_cycle() {
        let w = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::AddModule(constant(2)),
            conn(1, 1, 2),
            conn(2, 2, 1),
        ]);
        assert!(topological_order(&w).is_err());
    }

    #[test]
    fn ranks_use_longest_path() {
        // 1 -> 2 -> 3 and 1 -> 3: module 3 sits at depth 2.
        let w = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::AddModule(constant(2)),
            PrimitiveOp::AddModule(constant(3)),
            conn(1, 1, 2),
            conn(2, 2, 3),
            conn(3, 1, 3),
        ]);
        let ranks = topological_ranks(&w).unwrap();
        assert_eq!(ranks[&ModuleId(3)], 2);
        let d = descendants(&w, &BTreeSet::from([ModuleId(2)]));
        assert_eq!(d, BTreeSet::from([ModuleId(3)]));
    }

    #[test]
    fn inverse_of_unset_parameter_restores_module() {
        let pre = build(&[
            PrimitiveOp::AddModule(constant(1)),
            PrimitiveOp::AddModule(constant(2)),
            conn(1, 1, 2),
        ]);
        let op = PrimitiveOp::set_parameter(2, "value", Value::Integer(1));
        let mut w = apply_op(&pre, &op).unwrap();
        for inv in inverse_ops(&pre, &op).unwrap() {
            w.apply(&inv).unwrap();
        }
        assert_eq!(w, pre);
    }

    #[test]
    fn op_json_shape() {
        let op = PrimitiveOp::set_parameter(1, "value", Value::Integer(3));
        let json = serde_json::to_string(&op).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"set_parameter","module_id":1,"name":"value","value":{"type":"integer","value":3}}"#
        );
        let add = PrimitiveOp::AddModule(constant(2));
        let back: PrimitiveOp = serde_json::from_str(&serde_json::to_string(&add).unwrap()).unwrap();
        assert_eq!(back, add);
        let bad = r#"{"kind":"delete_module","module_id":1,"extra":true}"#;
        assert!(serde_json::from_str::<PrimitiveOp>(bad).is_err());
        let bad = r#"{"kind":"add_module","id":1,"descriptor":{"package_id":"p","package_version":"1","module_name":"m"},"parameters":{},"extra":1}"#;
        assert!(serde_json::from_str::<PrimitiveOp>(bad).is_err());
    }
}
