//! JSON-Lines dataset files: one product graph and reaction-center label per
//! line.
//!
//! ```json
//! {"v":1,"id":"rxn-1","smiles":"CCO","product":{"atoms":[{"z":6,"charge":0,"aromatic":false,"h":null}],
//!  "bonds":[{"a":0,"b":1,"order":"single","stereo":0,"dir":0}]},"rc":[1,2]}
//! ```
//!
//! When `product` is absent the graph is parsed from `smiles`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::smiles::parse_smiles;
use super::{Atom, Bond, BondDirection, BondOrder, MolGraph, NodeSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersionMismatch { line: usize, found: u32 },
}

/// One product graph with its ground-truth reaction-center node set.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub smiles: Option<String>,
    pub graph: MolGraph,
    pub label: NodeSet,
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    z: u8,
    charge: i8,
    aromatic: bool,
    h: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct BondRecord {
    a: usize,
    b: usize,
    order: BondOrder,
    stereo: u8,
    dir: u8,
}

#[derive(Serialize, Deserialize)]
struct ProductRecord {
    atoms: Vec<AtomRecord>,
    bonds: Vec<BondRecord>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    v: Option<u32>,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smiles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    product: Option<ProductRecord>,
    rc: Vec<usize>,
}

fn graph_to_record(g: &MolGraph) -> ProductRecord {
    ProductRecord {
        atoms: g
            .atoms()
            .iter()
            .map(|a| AtomRecord {
                z: a.element,
                charge: a.formal_charge,
                aromatic: a.aromatic,
                h: a.explicit_h,
            })
            .collect(),
        bonds: g
            .bonds()
            .iter()
            .map(|b| BondRecord {
                a: b.a,
                b: b.b,
                order: b.order,
                stereo: b.stereo,
                dir: b.direction as u8,
            })
            .collect(),
    }
}

fn record_to_graph(p: &ProductRecord) -> Result<MolGraph, String> {
    let atoms = p
        .atoms
        .iter()
        .map(|a| Atom {
            element: a.z,
            formal_charge: a.charge,
            aromatic: a.aromatic,
            explicit_h: a.h,
        })
        .collect();
    let bonds = p
        .bonds
        .iter()
        .map(|b| {
            let direction = BondDirection::from_index(b.dir)
                .ok_or_else(|| format!("bond direction {} out of range", b.dir))?;
            Ok(Bond {
                a: b.a,
                b: b.b,
                order: b.order,
                stereo: b.stereo,
                direction,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    MolGraph::new(atoms, bonds).map_err(|e| e.to_string())
}

/// Serializes one sample as a single JSON line (no trailing newline).
pub fn sample_to_json(sample: &Sample) -> String {
    let record = Record {
        v: Some(SCHEMA_VERSION),
        id: sample.id.clone(),
        smiles: sample.smiles.clone(),
        product: Some(graph_to_record(&sample.graph)),
        rc: sample.label.iter().copied().collect(),
    };
    serde_json::to_string(&record).expect("records always serialize")
}

/// Parses one JSON line; `line` is 1-based and only used in errors.
pub fn sample_from_json(text: &str, line: usize) -> Result<Sample, DatasetError> {
    let malformed = |message: String| DatasetError::MalformedRecord { line, message };
    let record: Record = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    match record.v {
        None => return Err(malformed("missing field `v`".into())),
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(DatasetError::SchemaVersionMismatch { line, found }),
    }
    let graph = match (&record.product, &record.smiles) {
        (Some(p), _) => record_to_graph(p).map_err(malformed)?,
        (None, Some(s)) => parse_smiles(s).map_err(|e| malformed(e.to_string()))?,
        (None, None) => return Err(malformed("neither `product` nor `smiles` present".into())),
    };
    let label: NodeSet = record.rc.iter().copied().collect();
    if label.len() != record.rc.len() {
        return Err(malformed("duplicate ids in `rc`".into()));
    }
    if let Some(&bad) = label.iter().find(|&&id| id >= graph.n_atoms()) {
        return Err(malformed(format!(
            "rc id {bad} out of range for {} atoms",
            graph.n_atoms()
        )));
    }
    Ok(Sample {
        id: record.id,
        smiles: record.smiles,
        graph,
        label,
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(sample_from_json(&line, i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        writeln!(w, "{}", sample_to_json(s)).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smiles_only_record_is_parsed() {
        let s = sample_from_json(r#"{"v":1,"id":"a","smiles":"CCO","rc":[1,2]}"#, 1).unwrap();
        assert_eq!(s.graph.n_atoms(), 3);
        assert_eq!(s.label, NodeSet::from([1, 2]));
    }

    #[test]
    fn missing_rc_is_malformed() {
        let err = sample_from_json(r#"{"v":1,"id":"a","smiles":"CCO"}"#, 7).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRecord { line: 7, .. }));
    }

    #[test]
    fn version_checked() {
        let err = sample_from_json(r#"{"v":2,"id":"a","smiles":"C","rc":[0]}"#, 3).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::SchemaVersionMismatch { line: 3, found: 2 }
        ));
        let err = sample_from_json(r#"{"id":"a","smiles":"C","rc":[0]}"#, 1).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRecord { .. }));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let err = sample_from_json(r#"{"v":1,"id":"a","smiles":"CC","rc":[4]}"#, 1).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRecord { .. }));
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn hydrogen_field_is_explicit_null() {
        let g = parse_smiles("C[NH3+]").unwrap();
        let s = Sample {
            id: "x".into(),
            smiles: None,
            graph: g,
            label: NodeSet::from([0]),
        };
        let json = sample_to_json(&s);
        assert!(json.contains(r#""h":null"#), "{json}");
        assert!(json.contains(r#""h":3"#), "{json}");
        assert!(json.starts_with(r#"{"v":1,"#));
        assert_eq!(sample_from_json(&json, 1).unwrap(), s);
    }
}
