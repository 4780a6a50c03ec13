//! JSON parameter snapshots. Every matrix is listed with its key and shape
//! and a row-major payload; floats are written in shortest round-trip form,
//! so reading a snapshot back is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelError, ModelKind, ModelParams, ParamKey, Role};
use crate::graph::{EdgeTypeSpec, Schema};
use crate::tensor::Tensor;

pub const SNAPSHOT_FORMAT: &str = "heterograph-params";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    kind: ModelKind,
    hyper: HyperParams,
    node_types: Vec<String>,
    edge_types: Vec<String>,
    matrices: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    layer: usize,
    role: Role,
    head: Option<usize>,
    type_key: Option<String>,
    shape: (usize, usize),
    data: Vec<f64>,
}

pub fn write_snapshot<W: Write>(params: &ModelParams, w: W) -> Result<(), ModelError> {
    let mut matrices = Vec::new();
    for (key, t) in params.iter() {
        if !t.is_finite() {
            return Err(ModelError::Snapshot(format!("{key} contains non-finite values")));
        }
        matrices.push(Entry {
            layer: key.layer,
            role: key.role,
            head: key.head,
            type_key: key.type_key.clone(),
            shape: t.shape(),
            data: t.to_vec(),
        });
    }
    let manifest = Manifest {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        kind: params.kind,
        hyper: params.hyper,
        node_types: params.node_types.clone(),
        edge_types: params.edge_types.clone(),
        matrices,
    };
    serde_json::to_writer(w, &manifest)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(r: R) -> Result<ModelParams, ModelError> {
    let m: Manifest = serde_json::from_reader(r)?;
    if m.format != SNAPSHOT_FORMAT || m.version != SNAPSHOT_VERSION {
        return Err(ModelError::Snapshot(format!(
            "unsupported snapshot {} v{}",
            m.format, m.version
        )));
    }
    let mut store = BTreeMap::new();
    for e in m.matrices {
        let key = ParamKey {
            layer: e.layer,
            role: e.role,
            head: e.head,
            type_key: e.type_key,
        };
        let t = Tensor::new(e.shape.0, e.shape.1, e.data).map_err(|err| ModelError::Snapshot(format!("{key}: {err}")))?;
        if store.insert(key.clone(), t).is_some() {
            return Err(ModelError::Snapshot(format!("{key} listed twice")));
        }
    }
    let schema = Schema {
        node_types: m.node_types,
        edge_types: m
            .edge_types
            .into_iter()
            .zip(0..)
            .map(|(name, code)| EdgeTypeSpec { name, code })
            .collect(),
        feature_count: m.hyper.input_dim,
    };
    let expected = ModelParams::layout(m.kind, &m.hyper, &schema).len();
    if store.len() != expected {
        return Err(ModelError::Snapshot(format!(
            "{} matrices listed, layout has {expected}",
            store.len()
        )));
    }
    ModelParams::from_store(m.kind, m.hyper, &schema, store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let hyper = HyperParams { hidden: 8, heads: 2, input_dim: 5, ..HyperParams::default() };
        for kind in ModelKind::ALL {
            let p = ModelParams::init(kind, hyper, &Schema::default(), 11).unwrap();
            let mut buf = Vec::new();
            write_snapshot(&p, &mut buf).unwrap();
            let q = read_snapshot(buf.as_slice()).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn rejects_wrong_format() {
        let text = r#"{"format":"other","version":1,"kind":"mlp","hyper":{"input_dim":1,"hidden":1,"heads":1,"layers":0,"outputs":1},"node_types":[],"edge_types":[],"matrices":[]}"#;
        assert!(matches!(read_snapshot(text.as_bytes()), Err(ModelError::Snapshot(_))));
    }
}
