// SPDX-License-Identifier: Apache-2.0

//! Compute behavior of the builtin modules.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::builtin;
use crate::datastore::DataStore;
use crate::engine::EngineConfig;
use crate::model::ModuleDescriptor;
use crate::value::Value;

pub type PortValues = BTreeMap<String, Value>;

/// The command an `ExternalTool` ran and how it exited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolInvocation {
    pub command: String,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleOutput {
    pub outputs: PortValues,
    pub tool: Option<ToolInvocation>,
}

/// `MODULE_ERROR` raised by a module; recorded in the log rather than
/// propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleError {
    pub message: String,
    pub tool: Option<ToolInvocation>,
}

impl ModuleError {
    fn new(message: impl Into<String>) -> Self {
        ModuleError {
            message: message.into(),
            tool: None,
        }
    }
}

fn single_output(desc: &ModuleDescriptor, value: Value) -> Result<ModuleOutput, ModuleError> {
    let [port] = desc.output_ports.as_slice() else {
        return Err(ModuleError::new(format!(
            "{} must declare exactly one output port",
            desc.module_name
        )));
    };
    Ok(ModuleOutput {
        outputs: BTreeMap::from([(port.name.clone(), value)]),
        tool: None,
    })
}

fn input<'a>(inputs: &'a PortValues, port: &str) -> Result<&'a Value, ModuleError> {
    inputs
        .get(port)
        .ok_or_else(|| ModuleError::new(format!("MISSING_INPUT: {port}")))
}

fn param<'a>(params: &'a PortValues, name: &str) -> Result<&'a Value, ModuleError> {
    params
        .get(name)
        .ok_or_else(|| ModuleError::new(format!("MISSING_PARAM: {name}")))
}

fn float(v: &Value, port: &str) -> Result<f64, ModuleError> {
    v.as_f64()
        .ok_or_else(|| ModuleError::new(format!("TYPE_MISMATCH: {port} expects float")))
}

fn text<'a>(v: &'a Value, port: &str) -> Result<&'a str, ModuleError> {
    v.as_str()
        .ok_or_else(|| ModuleError::new(format!("TYPE_MISMATCH: {port} expects string")))
}

/// Runs one builtin module.
///
/// Every builtin except `ExternalTool` is deterministic. Only `WriteData`
/// and `ExternalTool` write to the data store.
pub fn run_module(
    desc: &ModuleDescriptor,
    inputs: &PortValues,
    params: &PortValues,
    store: &mut DataStore,
    config: &EngineConfig,
) -> Result<ModuleOutput, ModuleError> {
    if desc.package_id != builtin::PACKAGE_ID {
        return Err(ModuleError::new(format!(
            "NO_IMPLEMENTATION: {} has no executable behavior",
            desc.key()
        )));
    }
    match desc.module_name.as_str() {
        "Constant" => single_output(desc, param(params, "value")?.clone()),
        "Add" | "Multiply" => {
            let a = float(input(inputs, "a")?, "a")?;
            let b = float(input(inputs, "b")?, "b")?;
            let result = if desc.module_name == "Add" { a + b } else { a * b };
            if !result.is_finite() {
                return Err(ModuleError::new("NON_FINITE: result overflowed"));
            }
            single_output(desc, Value::Float(result))
        }
        "Concat" => {
            let a = text(input(inputs, "a")?, "a")?;
            let b = text(input(inputs, "b")?, "b")?;
            single_output(desc, Value::String(format!("{a}{b}")))
        }
        "ReadData" => {
            let data_ref = param(params, "ref")?
                .as_dataref()
                .ok_or_else(|| ModuleError::new("TYPE_MISMATCH: ref expects dataref"))?;
            store
                .get(&data_ref.content_hash)
                .map_err(|e| ModuleError::new(e.to_string()))?;
            single_output(desc, Value::DataRef(data_ref.clone()))
        }
        "WriteData" => {
            let content = text(input(inputs, "in")?, "in")?;
            let data_ref = store
                .put(content.as_bytes(), None)
                .map_err(|e| ModuleError::new(e.to_string()))?;
            single_output(desc, Value::DataRef(data_ref))
        }
        "CsvColumnStats" => {
            let data_ref = input(inputs, "in")?
                .as_dataref()
                .ok_or_else(|| ModuleError::new("TYPE_MISMATCH: in expects dataref"))?;
            let column = text(param(params, "column")?, "column")?;
            let bytes = store
                .get(&data_ref.content_hash)
                .map_err(|e| ModuleError::new(e.to_string()))?;
            let stats = column_stats(&bytes, column).map_err(ModuleError::new)?;
            Ok(ModuleOutput {
                outputs: BTreeMap::from([
                    ("mean".to_owned(), Value::Float(stats.mean)),
                    ("min".to_owned(), Value::Float(stats.min)),
                    ("max".to_owned(), Value::Float(stats.max)),
                ]),
                tool: None,
            })
        }
        "ExternalTool" => external_tool(desc, inputs, params, store, config),
        other => Err(ModuleError::new(format!(
            "NO_IMPLEMENTATION: seed.basic has no module {other}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, minimum and maximum of one numeric column of headed CSV text.
pub fn column_stats(csv_bytes: &[u8], column: &str) -> Result<ColumnStats, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let headers = reader
        .headers()
        .map_err(|e| format!("BAD_CSV: {e}"))?
        .clone();
    let index = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| format!("COLUMN_NOT_FOUND: {column}"))?;

    let (mut sum, mut count) = (0.0f64, 0usize);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("BAD_CSV: {e}"))?;
        let cell = record.get(index).unwrap_or("");
        let x: f64 = cell
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| format!("NON_NUMERIC: row {} value {cell:?}", row + 1))?;
        sum += x;
        count += 1;
        min = min.min(x);
        max = max.max(x);
    }
    if count == 0 {
        return Err(format!("NO_ROWS: column {column} is empty"));
    }
    Ok(ColumnStats {
        mean: sum / count as f64,
        min,
        max,
    })
}

fn external_tool(
    desc: &ModuleDescriptor,
    inputs: &PortValues,
    params: &PortValues,
    store: &mut DataStore,
    config: &EngineConfig,
) -> Result<ModuleOutput, ModuleError> {
    if !config.allow_external_tools {
        return Err(ModuleError::new(
            "EXTERNAL_TOOLS_DISABLED: set allow_external_tools to run ExternalTool",
        ));
    }
    let template = text(param(params, "command_template")?, "command_template")?;
    let data_ref = input(inputs, "in")?
        .as_dataref()
        .ok_or_else(|| ModuleError::new("TYPE_MISMATCH: in expects dataref"))?;
    let content = store
        .get(&data_ref.content_hash)
        .map_err(|e| ModuleError::new(e.to_string()))?;

    let mut staged = tempfile::NamedTempFile::new().map_err(|e| ModuleError::new(e.to_string()))?;
    staged
        .write_all(&content)
        .and_then(|()| staged.flush())
        .map_err(|e| ModuleError::new(e.to_string()))?;
    let command = template.replace("{input}", &staged.path().display().to_string());

    let output = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| ModuleError::new(format!("SPAWN_FAILED: {e}")))?;
    let tool = ToolInvocation {
        command,
        exit_code: output.status.code(),
    };
    if !output.status.success() {
        return Err(ModuleError {
            message: format!(
                "EXIT_STATUS: {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr).trim()
            ),
            tool: Some(tool),
        });
    }
    let stdout_ref = store.put(&output.stdout, None).map_err(|e| ModuleError {
        message: e.to_string(),
        tool: Some(tool.clone()),
    })?;
    let mut out = single_output(desc, Value::DataRef(stdout_ref))?;
    out.tool = Some(tool);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::PackageRegistry;

    fn desc(name: &str) -> ModuleDescriptor {
        PackageRegistry::with_builtins()
            .lookup(&builtin::key(name))
            .unwrap()
            .clone()
    }

    fn values(pairs: &[(&str, Value)]) -> PortValues {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn store() -> (tempfile::TempDir, DataStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = DataStore::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn add_and_concat() {
        let (_d, mut s) = store();
        let cfg = EngineConfig::default();
        let out = run_module(
            &desc("Add"),
            &values(&[("a", Value::Float(2.0)), ("b", Value::Float(3.0))]),
            &PortValues::new(),
            &mut s,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.outputs, values(&[("out", Value::Float(5.0))]));

        let out = run_module(
            &desc("Concat"),
            &values(&[("a", Value::String("ab".into())), ("b", Value::String(String::new()))]),
            &PortValues::new(),
            &mut s,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.outputs["out"], Value::String("ab".into()));
    }

    #[test]
    fn missing_input_is_a_module_error() {
        let (_d, mut s) = store();
        let err = run_module(
            &desc("Multiply"),
            &values(&[("a", Value::Float(2.0))]),
            &PortValues::new(),
            &mut s,
            &EngineConfig::default(),
        )
        .unwrap_err();
        assert!(err.message.starts_with("MISSING_INPUT"));
    }

    #[test]
    fn csv_stats_fixture() {
        // x = 1, 2, 3: mean (1+2+3)/3 = 2, min 1, max 3.
        let stats = column_stats(b"x\n1\n2\n3\n", "x").unwrap();
        assert_eq!(stats, ColumnStats { mean: 2.0, min: 1.0, max: 3.0 });
        assert!(column_stats(b"x\n1\n2\n", "nope").unwrap_err().starts_with("COLUMN_NOT_FOUND"));
        assert!(column_stats(b"x\n", "x").unwrap_err().starts_with("NO_ROWS"));
        assert!(column_stats(b"x\nabc\n", "x").unwrap_err().starts_with("NON_NUMERIC"));
        let two = column_stats(b"a, b\n1, 10\n4, 20\n", "b").unwrap();
        assert_eq!(two.mean, 15.0);
    }

    #[test]
    fn write_then_stats() {
        let (_d, mut s) = store();
        let cfg = EngineConfig::default();
        let written = run_module(
            &desc("WriteData"),
            &values(&[("in", Value::String("x\n1\n2\n3\n".into()))]),
            &PortValues::new(),
            &mut s,
            &cfg,
        )
        .unwrap();
        let out = run_module(
            &desc("CsvColumnStats"),
            &values(&[("in", written.outputs["out"].clone())]),
            &values(&[("column", Value::String("x".into()))]),
            &mut s,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.outputs["mean"], Value::Float(2.0));
    }

    #[test]
    fn external_tool_disabled_by_default() {
        let (_d, mut s) = store();
        let r = s.put(b"hello", None).unwrap();
        let err = run_module(
            &desc("ExternalTool"),
            &values(&[("in", Value::DataRef(r))]),
            &values(&[("command_template", Value::String("cat {input}".into()))]),
            &mut s,
            &EngineConfig::default(),
        )
        .unwrap_err();
        assert!(err.message.starts_with("EXTERNAL_TOOLS_DISABLED"));
    }

    #[test]
    fn external_tool_captures_stdout() {
        let (_d, mut s) = store();
        let r = s.put(b"hello", None).unwrap();
        let cfg = EngineConfig {
            allow_external_tools: true,
            ..EngineConfig::default()
        };
        let out = run_module(
            &desc("ExternalTool"),
            &values(&[("in", Value::DataRef(r))]),
            &values(&[("command_template", Value::String("tr a-z A-Z < {input}".into()))]),
            &mut s,
            &cfg,
        )
        .unwrap();
        let tool = out.tool.unwrap();
        assert_eq!(tool.exit_code, Some(0));
        assert!(tool.command.starts_with("tr a-z A-Z < /"));
        let produced = out.outputs["out"].as_dataref().unwrap();
        assert_eq!(s.get(&produced.content_hash).unwrap(), b"HELLO");

        let failing = run_module(
            &desc("ExternalTool"),
            &values(&[("in", out.outputs["out"].clone())]),
            &values(&[("command_template", Value::String("exit 3".into()))]),
            &mut s,
            &cfg,
        )
        .unwrap_err();
        assert_eq!(failing.tool.unwrap().exit_code, Some(3));
    }
}
