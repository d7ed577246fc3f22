// SPDX-License-Identifier: Apache-2.0

//! Change-based provenance for scientific workflows.
//!
//! A [`Vistrail`] never stores workflows. It stores the edit [`Action`]s that
//! turned one workflow into another, arranged in a version tree rooted at the
//! empty workflow. Any version can be rebuilt on demand with
//! [`Vistrail::materialize`], executed with [`engine::execute`], upgraded onto
//! newer package versions, and exposed as a parameterized [`Mashup`].
//!
//! ```
//! use vt_core::{builtin, PackageRegistry, PrimitiveOp, Vistrail, Value};
//!
//! let registry = PackageRegistry::with_builtins();
//! let mut vt = Vistrail::new();
//! let module = builtin::instance(vt.next_module_id(), "Constant")
//!     .with_param("value", Value::Integer(2));
//! let v1 = vt.append_action(0.into(), vec![PrimitiveOp::AddModule(module)], "ada", "user-edit")?;
//!
//! let workflow = vt.materialize(v1)?;
//! assert_eq!(workflow.modules.len(), 1);
//! assert!(vt_core::validate_workflow(&workflow, &registry).is_valid());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod builtin;
pub mod canonical;
pub mod datastore;
pub mod engine;
pub mod mashup;
pub mod model;
pub mod provenance;
pub mod registry;
pub mod upgrade;
pub mod validate;
pub mod value;

pub use datastore::{ContentHash, DataRef, DataStore, DataStoreError};
pub use engine::{
    execute, EngineConfig, EngineError, ExecutionLog, ExecutionStatus, ExecutionStore, LogFilter,
    ModuleExecution, ModuleStatus, Overrides,
};
pub use mashup::{execute_mashup, Alias, Mashup, MashupError};
pub use model::{
    apply_op, inverse_ops, topological_order, Connection, ConnectionId, DescriptorKey,
    ModuleDescriptor, ModuleId, ModuleInstance, OpError, ParamSpec, PortRef, PortSpec,
    PrimitiveOp, Workflow,
};
pub use provenance::{
    Action, Clock, ProvenanceError, VersionDelta, VersionId, VersionNode, Vistrail,
};
pub use registry::{Package, PackageRegistry, PackageVersion, RegistryError, UpgradeRule};
pub use upgrade::{apply_upgrade, compute_upgrade, ApplyOptions, UpgradeError, UpgradePlan};
pub use validate::{validate_workflow, ValidationReport, Violation, ViolationCode};
pub use value::{Value, ValueType};
