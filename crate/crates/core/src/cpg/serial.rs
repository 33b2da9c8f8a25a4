//! Versioned JSON graph format.

use super::{CodePropertyGraph, CpgEdge, CpgError, CpgNode, NodeId};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    unit: String,
    functions: Vec<NodeId>,
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
}

pub fn save_cpg(g: &CodePropertyGraph, mut sink: impl Write) -> Result<(), CpgError> {
    let file = GraphFile {
        schema_version: SCHEMA_VERSION,
        unit: g.unit().to_string(),
        functions: g.functions().to_vec(),
        nodes: g.nodes().to_vec(),
        edges: g.edges().to_vec(),
    };
    serde_json::to_writer_pretty(&mut sink, &file).map_err(|e| CpgError::Format(e.to_string()))?;
    sink.write_all(b"\n").map_err(|e| CpgError::Format(e.to_string()))
}

pub fn load_cpg(mut source: impl Read) -> Result<CodePropertyGraph, CpgError> {
    let mut buf = String::new();
    source.read_to_string(&mut buf).map_err(|e| CpgError::Format(e.to_string()))?;
    let v: serde_json::Value =
        serde_json::from_str(&buf).map_err(|e| CpgError::Format(format!("unreadable graph: {e}")))?;
    match v.get("schema_version").and_then(|x| x.as_u64()) {
        Some(n) if n == SCHEMA_VERSION as u64 => {}
        Some(n) => {
            return Err(CpgError::Format(format!("schema version {n} is not supported (expected {SCHEMA_VERSION})")))
        }
        None => return Err(CpgError::Format("missing schema_version".into())),
    }
    let file: GraphFile = serde_json::from_value(v).map_err(|e| CpgError::Format(format!("invalid graph: {e}")))?;
    CodePropertyGraph::from_parts(file.unit, file.nodes, file.edges, file.functions)
}
