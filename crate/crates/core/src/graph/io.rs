//! CSV ingestion and serialization.
//!
//! * nodes: `id,type,lon,lat,f000,...` (one feature column per time bin)
//! * edges: `src,dst,edge_type` (directed; write both directions for roads)
//! * POIs: `lon,lat,category`

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::catchment::Poi;
use super::{EdgeRecord, GraphError, HeteroGraph, NodeRecord, Schema};

fn open(path: &Path) -> Result<File, GraphError> {
    File::open(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn column(headers: &csv::StringRecord, file: &str, name: &str) -> Result<usize, GraphError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| GraphError::MissingColumn {
            file: file.to_string(),
            column: name.to_string(),
        })
}

fn ingest_err(file: &str, record: &csv::StringRecord, message: String) -> GraphError {
    GraphError::Ingest {
        file: file.to_string(),
        line: record.position().map_or(0, |p| p.line()),
        message,
    }
}

fn parse_f64(file: &str, record: &csv::StringRecord, col: usize, what: &str) -> Result<f64, GraphError> {
    let raw = record
        .get(col)
        .ok_or_else(|| ingest_err(file, record, format!("missing field `{what}`")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ingest_err(file, record, format!("`{raw}` is not a valid {what}")))
}

fn is_feature_header(h: &str) -> bool {
    h.len() > 1 && h.starts_with('f') && h[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Reads node rows. Feature columns are the `fNNN` headers in header order.
pub fn read_nodes<R: Read>(src: R, schema: &Schema) -> Result<Vec<NodeRecord>, GraphError> {
    const FILE: &str = "nodes";
    let mut rdr = reader(src);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, FILE, "id")?;
    let type_col = column(&headers, FILE, "type")?;
    let lon_col = column(&headers, FILE, "lon")?;
    let lat_col = column(&headers, FILE, "lat")?;
    let feature_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| is_feature_header(h))
        .map(|(i, _)| i)
        .collect();
    if feature_cols.len() != schema.feature_count {
        return Err(GraphError::Ingest {
            file: FILE.into(),
            line: 1,
            message: format!(
                "header declares {} feature columns, expected {}",
                feature_cols.len(),
                schema.feature_count
            ),
        });
    }
    let mut nodes = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(ingest_err(
                FILE,
                &record,
                format!(
                    "expected {} fields ({} features), found {}",
                    headers.len(),
                    schema.feature_count,
                    record.len()
                ),
            ));
        }
        let id = record[id_col].to_string();
        let type_name = &record[type_col];
        let node_type = schema
            .node_type_index(type_name)
            .ok_or_else(|| ingest_err(FILE, &record, format!("unknown node type `{type_name}`")))?;
        let lon = parse_f64(FILE, &record, lon_col, "longitude")?;
        let lat = parse_f64(FILE, &record, lat_col, "latitude")?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v = parse_f64(FILE, &record, c, "feature value")?;
            if v < 0.0 {
                return Err(ingest_err(FILE, &record, format!("negative ridership {v}")));
            }
            features.push(v);
        }
        nodes.push(NodeRecord {
            id,
            node_type,
            lon,
            lat,
            features,
        });
    }
    Ok(nodes)
}

/// Reads edge rows, resolving ids against `nodes`.
pub fn read_edges<R: Read>(src: R, schema: &Schema, nodes: &[NodeRecord]) -> Result<Vec<EdgeRecord>, GraphError> {
    const FILE: &str = "edges";
    let index: std::collections::HashMap<&str, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut rdr = reader(src);
    let headers = rdr.headers()?.clone();
    let src_col = column(&headers, FILE, "src")?;
    let dst_col = column(&headers, FILE, "dst")?;
    let type_col = column(&headers, FILE, "edge_type")?;
    let mut edges = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |c: usize| {
            record
                .get(c)
                .ok_or_else(|| ingest_err(FILE, &record, "too few fields".into()))
        };
        let resolve = |id: &str| {
            index.get(id).copied().ok_or_else(|| {
                ingest_err(FILE, &record, GraphError::DanglingEdge { id: id.to_string() }.to_string())
            })
        };
        let src = resolve(field(src_col)?)?;
        let dst = resolve(field(dst_col)?)?;
        let type_name = field(type_col)?;
        let edge_type = schema
            .edge_type_index(type_name)
            .ok_or_else(|| ingest_err(FILE, &record, format!("unknown edge type `{type_name}`")))?;
        edges.push(EdgeRecord { src, dst, edge_type });
    }
    Ok(edges)
}

/// Reads POIs. Categories are kept as strings; unknown ones are dropped at labeling.
pub fn read_pois<R: Read>(src: R) -> Result<Vec<Poi>, GraphError> {
    const FILE: &str = "poi";
    let mut rdr = reader(src);
    let headers = rdr.headers()?.clone();
    let lon_col = column(&headers, FILE, "lon")?;
    let lat_col = column(&headers, FILE, "lat")?;
    let cat_col = column(&headers, FILE, "category")?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let lon = parse_f64(FILE, &record, lon_col, "longitude")?;
        let lat = parse_f64(FILE, &record, lat_col, "latitude")?;
        let category = record
            .get(cat_col)
            .ok_or_else(|| ingest_err(FILE, &record, "missing category".into()))?
            .to_string();
        out.push(Poi { lon, lat, category });
    }
    Ok(out)
}

/// Loads and validates a graph from node and edge CSV files.
pub fn load_graph(nodes_path: &Path, edges_path: &Path, schema: &Schema) -> Result<HeteroGraph, GraphError> {
    let nodes = read_nodes(open(nodes_path)?, schema)?;
    let edges = read_edges(open(edges_path)?, schema, &nodes)?;
    HeteroGraph::new(schema.clone(), nodes, edges)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// Writes the nodes CSV. Floats use shortest round-trip formatting.
pub fn write_nodes<W: Write>(graph: &HeteroGraph, w: W) -> Result<(), GraphError> {
    let mut wtr = csv_writer(w);
    let f = graph.schema().feature_count;
    let mut header = vec!["id".to_string(), "type".into(), "lon".into(), "lat".into()];
    header.extend((0..f).map(|k| format!("f{k:03}")));
    wtr.write_record(&header)?;
    for (i, n) in graph.nodes().iter().enumerate() {
        let mut row = vec![n.id.clone(), graph.node_type_name(i).to_string(), n.lon.to_string(), n.lat.to_string()];
        row.extend(graph.features().row(i).iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| GraphError::Csv(e.into()))?;
    Ok(())
}

pub fn write_edges<W: Write>(graph: &HeteroGraph, w: W) -> Result<(), GraphError> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["src", "dst", "edge_type"])?;
    for e in graph.edges() {
        wtr.write_record([
            graph.node(e.src).id.as_str(),
            graph.node(e.dst).id.as_str(),
            graph.schema().edge_types[e.edge_type].name.as_str(),
        ])?;
    }
    wtr.flush().map_err(|e| GraphError::Csv(e.into()))?;
    Ok(())
}

pub fn write_pois<W: Write>(pois: &[Poi], w: W) -> Result<(), GraphError> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["lon", "lat", "category"])?;
    for p in pois {
        wtr.write_record([p.lon.to_string(), p.lat.to_string(), p.category.clone()])?;
    }
    wtr.flush().map_err(|e| GraphError::Csv(e.into()))?;
    Ok(())
}
