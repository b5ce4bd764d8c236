//! Graph files and dataset directories.
//!
//! A graph file holds records of the form
//!
//! ```json
//! {"version":"v1","n":3,"source":0,"destination":2,
//!  "edges":[[0,1,1.0],[1,2,1.0],[0,2,3.0]],
//!  "labels":{"nodes":[1,1,1],"edges":[1,1,0]}}
//! ```
//!
//! `labels`, `structure` and `perturbation` are optional. Writers emit one
//! record per line. Readers also accept a JSON array of records or
//! whitespace-separated (including pretty-printed) records.
//!
//! A dataset directory contains `train.jsonl`, `val.jsonl`, `test.jsonl` and
//! `dataset.json` with the generating config and split counts.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Dataset, DatasetConfig, PerturbMode, Sample, Split};
use crate::graph::{Graph, GraphError, NodeId};
use crate::oracle::PathLabels;

pub const FORMAT_VERSION: &str = "v1";
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed record: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: record {index}: unsupported version {found:?} (expected {FORMAT_VERSION:?})")]
    Version {
        path: PathBuf,
        index: usize,
        found: String,
    },
    #[error("{path}: record {index}: {source}")]
    Graph {
        path: PathBuf,
        index: usize,
        source: GraphError,
    },
    #[error("{path}: record {index}: {reason}")]
    Labels {
        path: PathBuf,
        index: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub nodes: Vec<u8>,
    pub edges: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub version: String,
    pub n: usize,
    pub source: NodeId,
    pub destination: NodeId,
    pub edges: Vec<(NodeId, NodeId, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbMode>,
}

fn bits(flags: &[bool]) -> Vec<u8> {
    flags.iter().map(|&b| u8::from(b)).collect()
}

impl GraphRecord {
    pub fn from_graph(g: &Graph, labels: Option<&PathLabels>) -> Self {
        GraphRecord {
            version: FORMAT_VERSION.to_owned(),
            n: g.n_nodes(),
            source: g.source(),
            destination: g.destination(),
            edges: g.edges().iter().map(|e| (e.u, e.v, e.w)).collect(),
            labels: labels.map(|l| LabelRecord {
                nodes: bits(&l.nodes),
                edges: bits(&l.edges),
            }),
            structure: None,
            perturbation: None,
        }
    }

    pub fn from_sample(s: &Sample) -> Self {
        GraphRecord {
            structure: s.structure,
            perturbation: s.perturbation,
            ..GraphRecord::from_graph(&s.graph, Some(&s.labels))
        }
    }

    pub fn graph(&self) -> Result<Graph, GraphError> {
        Graph::new(self.n, self.edges.iter().copied(), self.source, self.destination)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes one record per line.
pub fn write_records(path: &Path, records: &[GraphRecord]) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|source| IoError::Json {
            path: path.to_owned(),
            source,
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_records(path: &Path) -> Result<Vec<GraphRecord>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let json = |source| IoError::Json {
        path: path.to_owned(),
        source,
    };
    let is_array = loop {
        let buf = reader.fill_buf().map_err(io_err(path))?;
        match buf.iter().position(|b| !b.is_ascii_whitespace()) {
            Some(i) => {
                let first = buf[i];
                reader.consume(i);
                break first == b'[';
            }
            None if buf.is_empty() => break false,
            None => {
                let len = buf.len();
                reader.consume(len);
            }
        }
    };
    let records: Vec<GraphRecord> = if is_array {
        serde_json::from_reader(reader).map_err(json)?
    } else {
        serde_json::Deserializer::from_reader(reader)
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(json)?
    };
    for (index, r) in records.iter().enumerate() {
        if r.version != FORMAT_VERSION {
            return Err(IoError::Version {
                path: path.to_owned(),
                index,
                found: r.version.clone(),
            });
        }
    }
    Ok(records)
}

/// Graphs with their stored labels, if any.
pub fn read_graphs(path: &Path) -> Result<Vec<(Graph, Option<PathLabels>)>, IoError> {
    read_records(path)?
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let g = r.graph().map_err(|source| IoError::Graph {
                path: path.to_owned(),
                index,
                source,
            })?;
            let labels = r.labels.map(|l| PathLabels {
                nodes: l.nodes.iter().map(|&b| b != 0).collect(),
                edges: l.edges.iter().map(|&b| b != 0).collect(),
            });
            Ok((g, labels))
        })
        .collect()
}

/// Labelled samples. Every graph is relabelled by the oracle and stored
/// labels must agree with the result.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, IoError> {
    let records = read_records(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let labels_err = |reason: String| IoError::Labels {
                path: path.to_owned(),
                index,
                reason,
            };
            let g = r.graph().map_err(|source| IoError::Graph {
                path: path.to_owned(),
                index,
                source,
            })?;
            let mut sample = Sample::from_graph(g).map_err(|e| labels_err(e.to_string()))?;
            if let Some(stored) = &r.labels {
                if stored.nodes != bits(&sample.labels.nodes)
                    || stored.edges != bits(&sample.labels.edges)
                {
                    return Err(labels_err("stored labels disagree with the oracle".into()));
                }
            }
            sample.structure = r.structure;
            sample.perturbation = r.perturbation;
            Ok(sample)
        })
        .collect()
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<(), IoError> {
    let records: Vec<GraphRecord> = samples.iter().map(GraphRecord::from_sample).collect();
    write_records(path, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub config: DatasetConfig,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Structures dropped for lack of a unique optimum.
    pub discarded: usize,
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Writes the three split files and the dataset manifest into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for split in Split::ALL {
        let path = split_path(dir, split);
        write_samples(&path, ds.split(split))?;
        written.push(path);
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION.to_owned(),
        config: ds.config.clone(),
        train: ds.train.len(),
        val: ds.val.len(),
        test: ds.test.len(),
        discarded: ds.discarded,
    };
    let path = dir.join(DATASET_MANIFEST);
    write_json(&path, &manifest)?;
    written.push(path);
    Ok(written)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest: DatasetManifest = read_json(&dir.join(DATASET_MANIFEST))?;
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = split_path(dir, split);
        let samples = read_samples(&path)?;
        let expected = match split {
            Split::Train => manifest.train,
            Split::Val => manifest.val,
            Split::Test => manifest.test,
        };
        if samples.len() != expected {
            return Err(IoError::Labels {
                path,
                index: samples.len(),
                reason: format!("manifest lists {expected} samples, file has {}", samples.len()),
            });
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Dataset {
        config: manifest.config,
        train,
        val,
        test,
        discarded: manifest.discarded,
    })
}
