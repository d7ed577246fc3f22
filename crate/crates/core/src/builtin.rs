// SPDX-License-Identifier: Apache-2.0

//! The builtin `seed.basic` package.
//!
//! Version 1.0 is what every registry starts with. Version 2.0 differs only in
//! the name of `Add`'s output port (`out` became `result`) and exists to give
//! upgrades something deterministic to do.

use crate::model::{DescriptorKey, ModuleDescriptor, ModuleInstance, ModuleId, ParamSpec, PortSpec};
use crate::registry::{Package, UpgradeRule};
use crate::value::ValueType;

pub const PACKAGE_ID: &str = "seed.basic";
pub const V1: &str = "1.0";
pub const V2: &str = "2.0";

pub const MODULE_NAMES: [&str; 8] = [
    "Constant",
    "Add",
    "Multiply",
    "Concat",
    "ReadData",
    "WriteData",
    "CsvColumnStats",
    "ExternalTool",
];

fn port(name: &str, port_type: ValueType) -> PortSpec {
    PortSpec {
        name: name.to_owned(),
        port_type,
    }
}

fn required(name: &str, value_type: ValueType) -> ParamSpec {
    ParamSpec {
        name: name.to_owned(),
        value_type,
        default: None,
    }
}

fn descriptor(
    version: &str,
    name: &str,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    parameters: Vec<ParamSpec>,
) -> ModuleDescriptor {
    ModuleDescriptor {
        package_id: PACKAGE_ID.to_owned(),
        package_version: version.to_owned(),
        module_name: name.to_owned(),
        input_ports: inputs,
        output_ports: outputs,
        parameters,
    }
}

fn descriptors(version: &str, add_output: &str) -> Vec<ModuleDescriptor> {
    use ValueType::*;
    let binary = |name: &str, ty: ValueType, out: &str| {
        descriptor(version, name, vec![port("a", ty), port("b", ty)], vec![port(out, ty)], vec![])
    };
    vec![
        descriptor(version, "Constant", vec![], vec![port("out", Any)], vec![required("value", Any)]),
        binary("Add", Float, add_output),
        binary("Multiply", Float, "out"),
        binary("Concat", String, "out"),
        descriptor(version, "ReadData", vec![], vec![port("out", DataRef)], vec![required("ref", DataRef)]),
        descriptor(version, "WriteData", vec![port("in", String)], vec![port("out", DataRef)], vec![]),
        descriptor(
            version,
            "CsvColumnStats",
            vec![port("in", DataRef)],
            vec![port("mean", Float), port("min", Float), port("max", Float)],
            vec![required("column", String)],
        ),
        descriptor(
            version,
            "ExternalTool",
            vec![port("in", DataRef)],
            vec![port("out", DataRef)],
            vec![required("command_template", String)],
        ),
    ]
}

pub fn basic_v1() -> Package {
    Package {
        package_id: PACKAGE_ID.to_owned(),
        package_version: V1.to_owned(),
        descriptors: descriptors(V1, "out"),
        upgrade_rules: vec![],
    }
}

/// The 2.0 fixture, with rules carrying every 1.0 module across.
pub fn basic_v2() -> Package {
    let upgrade_rules = MODULE_NAMES
        .iter()
        .map(|name| {
            let mut rule = UpgradeRule::identity(PACKAGE_ID, V1, V2, name);
            if *name == "Add" {
                rule.port_map.insert("out".to_owned(), "result".to_owned());
            }
            rule
        })
        .collect();
    Package {
        package_id: PACKAGE_ID.to_owned(),
        package_version: V2.to_owned(),
        descriptors: descriptors(V2, "result"),
        upgrade_rules,
    }
}

pub fn key(module_name: &str) -> DescriptorKey {
    DescriptorKey::new(PACKAGE_ID, V1, module_name)
}

/// An instance of a `seed.basic` 1.0 module with no parameters set.
pub fn instance(id: impl Into<ModuleId>, module_name: &str) -> ModuleInstance {
    ModuleInstance::new(id, key(module_name))
}
