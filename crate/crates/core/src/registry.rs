// SPDX-License-Identifier: Apache-2.0

//! Versioned packages of module descriptors and the upgrade rules between
//! package versions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtin;
use crate::canonical;
use crate::model::{DescriptorKey, ModuleDescriptor};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("DUPLICATE_PACKAGE: {0} {1} is already registered")]
    DuplicatePackage(String, String),
    #[error("UNKNOWN_DESCRIPTOR: {0}")]
    UnknownDescriptor(DescriptorKey),
    #[error("INVALID_PACKAGE: {0}")]
    InvalidPackage(String),
    #[error("FORMAT_ERROR: {0}")]
    Format(String),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::DuplicatePackage(..) => "DUPLICATE_PACKAGE",
            RegistryError::UnknownDescriptor(_) => "UNKNOWN_DESCRIPTOR",
            RegistryError::InvalidPackage(_) => "INVALID_PACKAGE",
            RegistryError::Format(_) => "FORMAT_ERROR",
            RegistryError::Io(_) => "IO_ERROR",
        }
    }
}

/// Dotted numeric version such as `1.0` or `2.1.3`.
///
/// Ordering pads missing components with zeros, so `1.0 < 1.0.1 < 2.0`.
#[derive(Debug, Clone, Eq)]
pub struct PackageVersion {
    text: String,
    parts: Vec<u64>,
}

impl PackageVersion {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl FromStr for PackageVersion {
    type Err = RegistryError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let parts = text
            .split('.')
            .map(|p| p.parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| RegistryError::InvalidPackage(format!("bad version {text:?}")))?;
        Ok(PackageVersion {
            text: text.to_owned(),
            parts,
        })
    }
}

impl Ord for PackageVersion {
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.parts.len().max(other.parts.len());
        let at = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0);
        (0..n)
            .map(|i| at(&self.parts, i).cmp(&at(&other.parts, i)))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.text.cmp(&other.text))
    }
}

impl PartialOrd for PackageVersion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for PackageVersion {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl fmt::Display for PackageVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSource {
    pub package_id: String,
    pub version: String,
    pub module_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTarget {
    pub version: String,
    pub module_name: String,
}

/// Rewrites one module type from an older package version onto a newer one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpgradeRule {
    pub from: RuleSource,
    pub to: RuleTarget,
    /// Old port name to new port name. Unlisted ports keep their name.
    #[serde(default)]
    pub port_map: BTreeMap<String, String>,
    /// Old parameter name to new name. Unlisted parameters keep their name.
    #[serde(default)]
    pub param_map: BTreeMap<String, String>,
    #[serde(default)]
    pub dropped_params: BTreeSet<String>,
}

impl UpgradeRule {
    /// A rule that only moves `module_name` from one version to another.
    pub fn identity(package_id: &str, from: &str, to: &str, module_name: &str) -> Self {
        UpgradeRule {
            from: RuleSource {
                package_id: package_id.to_owned(),
                version: from.to_owned(),
                module_name: module_name.to_owned(),
            },
            to: RuleTarget {
                version: to.to_owned(),
                module_name: module_name.to_owned(),
            },
            port_map: BTreeMap::new(),
            param_map: BTreeMap::new(),
            dropped_params: BTreeSet::new(),
        }
    }

    pub fn source_key(&self) -> DescriptorKey {
        DescriptorKey::new(&self.from.package_id, &self.from.version, &self.from.module_name)
    }

    pub fn target_key(&self) -> DescriptorKey {
        DescriptorKey::new(&self.from.package_id, &self.to.version, &self.to.module_name)
    }

    pub fn map_port<'a>(&'a self, port: &'a str) -> &'a str {
        self.port_map.get(port).map(String::as_str).unwrap_or(port)
    }

    /// New name for `param`, or `None` if the parameter is dropped.
    pub fn map_param<'a>(&'a self, param: &'a str) -> Option<&'a str> {
        if self.dropped_params.contains(param) {
            return None;
        }
        Some(self.param_map.get(param).map(String::as_str).unwrap_or(param))
    }

    /// The rule equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &UpgradeRule) -> UpgradeRule {
        let compose = |first: &BTreeMap<String, String>, second: &BTreeMap<String, String>| {
            let mut out = BTreeMap::new();
            for (old, mid) in first {
                out.insert(old.clone(), second.get(mid).unwrap_or(mid).clone());
            }
            for (mid, new) in second {
                if !first.values().any(|m| m == mid) && !first.contains_key(mid) {
                    out.insert(mid.clone(), new.clone());
                }
            }
            out.retain(|k, v| k != v);
            out
        };
        let mut dropped = self.dropped_params.clone();
        // A parameter dropped in the second step is dropped under whatever
        // name it had before the first step.
        for mid in &next.dropped_params {
            match self.param_map.iter().find(|(_, m)| *m == mid) {
                Some((old, _)) => {
                    dropped.insert(old.clone());
                }
                None if !self.param_map.contains_key(mid) => {
                    dropped.insert(mid.clone());
                }
                None => {}
            }
        }
        UpgradeRule {
            from: self.from.clone(),
            to: next.to.clone(),
            port_map: compose(&self.port_map, &next.port_map),
            param_map: compose(&self.param_map, &next.param_map),
            dropped_params: dropped,
        }
    }
}

/// A versioned collection of descriptors plus the rules that upgrade older
/// versions into this one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Package {
    pub package_id: String,
    pub package_version: String,
    pub descriptors: Vec<ModuleDescriptor>,
    #[serde(default)]
    pub upgrade_rules: Vec<UpgradeRule>,
}

impl Package {
    pub fn descriptor(&self, module_name: &str) -> Option<&ModuleDescriptor> {
        self.descriptors.iter().find(|d| d.module_name == module_name)
    }

    /// Reads a `.pkgj` manifest.
    pub fn load_manifest(path: &Path) -> Result<Package, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_manifest(&text)
    }

    pub fn from_manifest(text: &str) -> Result<Package, RegistryError> {
        serde_json::from_str(text).map_err(|e| {
            RegistryError::Format(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_manifest(&self) -> String {
        canonical::to_string(self).expect("packages serialize")
    }

    fn check(&self) -> Result<PackageVersion, RegistryError> {
        let invalid = |msg: String| {
            Err(RegistryError::InvalidPackage(format!(
                "{} {}: {msg}",
                self.package_id, self.package_version
            )))
        };
        let version: PackageVersion = self.package_version.parse()?;
        let mut names = BTreeSet::new();
        for d in &self.descriptors {
            if d.package_id != self.package_id || d.package_version != self.package_version {
                return invalid(format!("descriptor {} belongs to another package", d.key()));
            }
            if !names.insert(d.module_name.as_str()) {
                return invalid(format!("duplicate module {:?}", d.module_name));
            }
            if let Err(msg) = d.check() {
                return invalid(format!("{}: {msg}", d.module_name));
            }
        }
        for rule in &self.upgrade_rules {
            if rule.from.package_id != self.package_id || rule.to.version != self.package_version {
                return invalid(format!("rule {} does not target this package", rule.source_key()));
            }
            let from: PackageVersion = rule.from.version.parse()?;
            if from >= version {
                return invalid(format!("rule from {} is not older", rule.from.version));
            }
            let Some(target) = self.descriptor(&rule.to.module_name) else {
                return invalid(format!("rule targets unknown module {:?}", rule.to.module_name));
            };
            for new_port in rule.port_map.values() {
                if target.input(new_port).is_none() && target.output(new_port).is_none() {
                    return invalid(format!("rule maps to unknown port {new_port:?}"));
                }
            }
            for new_param in rule.param_map.values() {
                if target.param(new_param).is_none() {
                    return invalid(format!("rule maps to unknown parameter {new_param:?}"));
                }
            }
        }
        Ok(version)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PackageRegistry {
    packages: BTreeMap<String, BTreeMap<PackageVersion, Package>>,
}

impl PackageRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the builtin `seed.basic` 1.0 package.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(builtin::basic_v1())
            .expect("builtin package is well-formed");
        reg
    }

    pub fn register(&mut self, pkg: Package) -> Result<(), RegistryError> {
        let version = pkg.check()?;
        let versions = self.packages.entry(pkg.package_id.clone()).or_default();
        if versions.contains_key(&version) {
            return Err(RegistryError::DuplicatePackage(
                pkg.package_id,
                pkg.package_version,
            ));
        }
        versions.insert(version, pkg);
        Ok(())
    }

    /// Exact-version lookup; no implicit resolution to other versions.
    pub fn lookup(&self, key: &DescriptorKey) -> Result<&ModuleDescriptor, RegistryError> {
        self.package(&key.package_id, &key.package_version)
            .and_then(|p| p.descriptor(&key.module_name))
            .ok_or_else(|| RegistryError::UnknownDescriptor(key.clone()))
    }

    pub fn package(&self, package_id: &str, version: &str) -> Option<&Package> {
        let version: PackageVersion = version.parse().ok()?;
        self.packages.get(package_id)?.get(&version)
    }

    pub fn newest_version(&self, package_id: &str) -> Option<&PackageVersion> {
        self.packages.get(package_id)?.keys().next_back()
    }

    /// Every registered package, ordered by id then version.
    pub fn packages(&self) -> impl Iterator<Item = &Package> {
        self.packages.values().flat_map(|versions| versions.values())
    }

    /// Registered rules that upgrade `key`, whose target is registered.
    pub fn rules_from<'a>(&'a self, key: &'a DescriptorKey) -> impl Iterator<Item = &'a UpgradeRule> + 'a {
        self.packages
            .get(&key.package_id)
            .into_iter()
            .flat_map(|versions| versions.values())
            .flat_map(|p| p.upgrade_rules.iter())
            .filter(move |r| {
                r.from.module_name == key.module_name
                    && r.from.version.parse::<PackageVersion>().ok()
                        == key.package_version.parse::<PackageVersion>().ok()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_ordering() {
        let v = |s: &str| s.parse::<PackageVersion>().unwrap();
        assert!(v("1.0") < v("2.0"));
        assert!(v("1.9") < v("1.10"));
        assert!(v("1.0") < v("1.0.1"));
        assert!("1.x".parse::<PackageVersion>().is_err());
    }

    #[test]
    fn register_and_lookup() {
        let reg = PackageRegistry::with_builtins();
        let add = reg
            .lookup(&DescriptorKey::new(builtin::PACKAGE_ID, "1.0", "Add"))
            .unwrap();
        let inputs: Vec<_> = add.input_ports.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(inputs, ["a", "b"]);
        assert_eq!(add.output_ports[0].name, "out");

        let constant = reg
            .lookup(&DescriptorKey::new(builtin::PACKAGE_ID, "1.0", "Constant"))
            .unwrap();
        assert!(constant.param("value").is_some());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut reg = PackageRegistry::with_builtins();
        let err = reg.register(builtin::basic_v1()).unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_PACKAGE");
    }

    #[test]
    fn unknown_lookups() {
        let mut reg = PackageRegistry::with_builtins();
        let missing = DescriptorKey::new(builtin::PACKAGE_ID, "1.0", "Nope");
        assert_eq!(reg.lookup(&missing).unwrap_err().code(), "UNKNOWN_DESCRIPTOR");
        let v3 = DescriptorKey::new(builtin::PACKAGE_ID, "3.0", "Add");
        assert_eq!(reg.lookup(&v3).unwrap_err().code(), "UNKNOWN_DESCRIPTOR");

        reg.register(builtin::basic_v2()).unwrap();
        let add2 = reg
            .lookup(&DescriptorKey::new(builtin::PACKAGE_ID, "2.0", "Add"))
            .unwrap();
        assert_eq!(add2.output_ports[0].name, "result");
        assert_eq!(reg.newest_version(builtin::PACKAGE_ID).unwrap().as_str(), "2.0");
    }

    #[test]
    fn registration_order_irrelevant() {
        let mut a = PackageRegistry::new();
        a.register(builtin::basic_v1()).unwrap();
        a.register(builtin::basic_v2()).unwrap();
        let mut b = PackageRegistry::new();
        b.register(builtin::basic_v2()).unwrap();
        b.register(builtin::basic_v1()).unwrap();
        let ids = |r: &PackageRegistry| {
            r.packages()
                .map(|p| p.package_version.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn rules_must_point_at_existing_ports() {
        let mut pkg = builtin::basic_v2();
        pkg.upgrade_rules[0]
            .port_map
            .insert("out".into(), "nowhere".into());
        assert_eq!(
            PackageRegistry::new().register(pkg).unwrap_err().code(),
            "INVALID_PACKAGE"
        );
    }

    #[test]
    fn rule_composition() {
        let mut a = UpgradeRule::identity("p", "1.0", "2.0", "M");
        a.port_map.insert("x".into(), "y".into());
        a.param_map.insert("k".into(), "k2".into());
        a.dropped_params.insert("old".into());
        let mut b = UpgradeRule::identity("p", "2.0", "3.0", "M");
        b.port_map.insert("y".into(), "z".into());
        b.dropped_params.insert("k2".into());
        let ab = a.then(&b);
        assert_eq!(ab.to.version, "3.0");
        assert_eq!(ab.map_port("x"), "z");
        assert_eq!(ab.map_param("k"), None);
        assert_eq!(ab.map_param("old"), None);
        assert_eq!(ab.map_param("other"), Some("other"));
    }

    #[test]
    fn manifest_round_trip_and_strictness() {
        let pkg = builtin::basic_v2();
        let text = pkg.to_manifest();
        assert_eq!(Package::from_manifest(&text).unwrap(), pkg);
        let bogus = text.replacen("\"package_id\"", "\"surprise\": 1,\n  \"package_id\"", 1);
        assert_eq!(Package::from_manifest(&bogus).unwrap_err().code(), "FORMAT_ERROR");
    }
}
