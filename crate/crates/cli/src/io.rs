//! On-disk formats: dataset directories, checkpoints, history and metrics
//! CSV files, and binary PGM rasters.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use margfit_core::model::{grid_edges, Graph, Labeling};
use margfit_core::trainer::{FeatureModel, HistoryEntry, Instance, Metrics};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Grid shape of a dataset whose instances are all `rows x cols` grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub generator: String,
    pub seed: u64,
    pub instances: usize,
    pub labels: usize,
    pub unary_dim: usize,
    pub edge_dim: usize,
    pub grid: Option<GridDims>,
    /// Generator settings, for the record.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: Meta,
    pub instances: Vec<Instance>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, CliError> {
    csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))
}

fn header(prefix: &[&str], name: char, dim: usize) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|k| format!("{name}{k}")))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Writes one split into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (du, dv) = (data.meta.unary_dim, data.meta.edge_dim);

    let path = dir.join("features_unary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(header(&["instance", "node"], 'u', du))
        .map_err(|e| CliError::io(&path, e))?;
    for (k, inst) in data.instances.iter().enumerate() {
        for i in 0..inst.graph.node_count() {
            let mut row = vec![k.to_string(), i.to_string()];
            row.extend(inst.unary(i).iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| CliError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("features_edge.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(header(&["instance", "edge", "i", "j"], 'v', dv))
        .map_err(|e| CliError::io(&path, e))?;
    for (k, inst) in data.instances.iter().enumerate() {
        for (e, &(i, j)) in inst.graph.edges().iter().enumerate() {
            let mut row = vec![k.to_string(), e.to_string(), i.to_string(), j.to_string()];
            row.extend(inst.edge(e).iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| CliError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("labels.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["instance", "node", "label"])
        .map_err(|e| CliError::io(&path, e))?;
    for (k, inst) in data.instances.iter().enumerate() {
        for (i, v) in inst.target.to_signed().iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), v.to_string()])
                .map_err(|e| CliError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    write_json(&dir.join("meta.json"), &data.meta)
}

fn parse_usize(path: &Path, s: &str) -> Result<usize, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::input(format!("{}: expected an index, got {s:?}", path.display())))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::input(format!("{}: expected a number, got {s:?}", path.display())))
}

/// Rows of a per-instance CSV file grouped by instance, in file order.
fn grouped_rows(path: &Path, instances: usize) -> Result<Vec<Vec<csv::StringRecord>>, CliError> {
    let mut out = vec![Vec::new(); instances];
    for rec in csv_reader(path)?.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let k = parse_usize(path, rec.get(0).unwrap_or(""))?;
        if k >= instances {
            return Err(CliError::input(format!(
                "{}: instance {k} but meta.json declares {instances}",
                path.display()
            )));
        }
        out[k].push(rec);
    }
    Ok(out)
}

/// Node count and edge list.
type GraphKey = (usize, Vec<(usize, usize)>);

/// Reads a split written by [`write_dataset`]. Instances with the same edge
/// list share one graph.
pub fn read_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let n = meta.instances;
    let upath = dir.join("features_unary.csv");
    let epath = dir.join("features_edge.csv");
    let lpath = dir.join("labels.csv");
    let unary = grouped_rows(&upath, n)?;
    let edges = grouped_rows(&epath, n)?;
    let labels = grouped_rows(&lpath, n)?;
    let mut graphs: HashMap<GraphKey, Arc<Graph>> = HashMap::new();
    let mut instances = Vec::with_capacity(n);
    for k in 0..n {
        let nodes = unary[k].len();
        let mut u = Vec::with_capacity(nodes * meta.unary_dim);
        for (i, rec) in unary[k].iter().enumerate() {
            if parse_usize(&upath, rec.get(1).unwrap_or(""))? != i
                || rec.len() != 2 + meta.unary_dim
            {
                return Err(CliError::input(format!(
                    "{}: instance {k} row {i} is out of order or has the wrong width",
                    upath.display()
                )));
            }
            for f in rec.iter().skip(2) {
                u.push(parse_f64(&upath, f)?);
            }
        }
        let mut edge_list = Vec::with_capacity(edges[k].len());
        let mut v = Vec::with_capacity(edges[k].len() * meta.edge_dim);
        for (e, rec) in edges[k].iter().enumerate() {
            if parse_usize(&epath, rec.get(1).unwrap_or(""))? != e || rec.len() != 4 + meta.edge_dim
            {
                return Err(CliError::input(format!(
                    "{}: instance {k} row {e} is out of order or has the wrong width",
                    epath.display()
                )));
            }
            edge_list.push((parse_usize(&epath, &rec[2])?, parse_usize(&epath, &rec[3])?));
            for f in rec.iter().skip(4) {
                v.push(parse_f64(&epath, f)?);
            }
        }
        let mut signed = vec![-1i64; nodes];
        for rec in &labels[k] {
            let i = parse_usize(&lpath, rec.get(1).unwrap_or(""))?;
            let l: i64 = rec.get(2).unwrap_or("").trim().parse().map_err(|_| {
                CliError::input(format!("{}: bad label in instance {k}", lpath.display()))
            })?;
            *signed.get_mut(i).ok_or_else(|| {
                CliError::input(format!(
                    "{}: node {i} out of range in instance {k}",
                    lpath.display()
                ))
            })? = l;
        }
        let key = (nodes, edge_list);
        let graph = match graphs.get(&key) {
            Some(g) => g.clone(),
            None => {
                let g = Graph::new(vec![meta.labels; nodes], key.1.clone())?;
                graphs.insert(key, g.clone());
                g
            }
        };
        instances.push(Instance::new(graph, u, v, Labeling::from_signed(&signed)?)?);
    }
    Ok(Dataset { meta, instances })
}

/// Metadata describing `instances`, which share one label count and
/// feature layout.
pub fn dataset_meta(
    generator: &str,
    seed: u64,
    instances: &[Instance],
    grid: Option<GridDims>,
) -> Meta {
    Meta {
        generator: generator.into(),
        seed,
        instances: instances.len(),
        labels: instances.first().map_or(2, |i| i.graph.labels(0)),
        unary_dim: instances.first().map_or(0, Instance::unary_dim),
        edge_dim: instances.first().and_then(Instance::edge_dim).unwrap_or(0),
        grid,
        params: Default::default(),
    }
}

/// True when `graph` is exactly the grid described by `dims`.
pub fn is_grid(graph: &Graph, dims: GridDims) -> bool {
    let edges: Vec<(usize, usize)> = grid_edges(dims.rows, dims.cols)
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    graph.node_count() == dims.rows * dims.cols && graph.edges() == edges.as_slice()
}

/// Checkpoint file: weights laid out as matrices plus the run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// `labels x unary_dim`.
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    /// `labels² x edge_dim`.
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub config: RunConfig,
    pub iteration: usize,
    pub risk: f64,
}

impl Checkpoint {
    pub fn new(model: &FeatureModel, config: RunConfig, iteration: usize, risk: f64) -> Self {
        let rows = |w: &[f64], width: usize| -> Vec<Vec<f64>> {
            if width == 0 {
                return Vec::new();
            }
            w.chunks(width).map(<[f64]>::to_vec).collect()
        };
        Checkpoint {
            f: rows(model.f(), model.unary_dim),
            g: rows(model.g(), model.edge_dim),
            config,
            iteration,
            risk,
        }
    }

    pub fn model(&self) -> Result<FeatureModel, CliError> {
        let labels = self.f.len();
        let du = self.f.first().map_or(0, Vec::len);
        let dv = self.g.first().map_or(0, Vec::len);
        if labels == 0 || self.g.len() != labels * labels {
            return Err(CliError::input(format!(
                "checkpoint has {labels} rows in F and {} rows in G; G needs labels² rows",
                self.g.len()
            )));
        }
        if self.f.iter().any(|r| r.len() != du) || self.g.iter().any(|r| r.len() != dv) {
            return Err(CliError::input(
                "checkpoint matrices have ragged rows".into(),
            ));
        }
        let f: Vec<f64> = self.f.concat();
        let g: Vec<f64> = self.g.concat();
        Ok(FeatureModel::from_parts(labels, du, dv, &f, &g)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }
}

pub const HISTORY_HEADER: [&str; 7] = [
    "iteration",
    "risk",
    "grad_norm",
    "wall_time",
    "inference_calls",
    "restarted",
    "train_error",
];

/// Streams `history.csv` rows as training progresses.
pub struct HistoryWriter {
    inner: csv::Writer<fs::File>,
    path: std::path::PathBuf,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut inner = csv_writer(path)?;
        inner
            .write_record(HISTORY_HEADER)
            .map_err(|e| CliError::io(path, e))?;
        Ok(HistoryWriter {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, h: &HistoryEntry, train_error: f64) -> Result<(), CliError> {
        self.inner
            .write_record([
                h.iteration.to_string(),
                h.risk.to_string(),
                h.grad_norm.to_string(),
                h.wall_time.to_string(),
                h.inference_calls.to_string(),
                h.restarted.to_string(),
                train_error.to_string(),
            ])
            .and_then(|_| self.inner.flush().map_err(Into::into))
            .map_err(|e| CliError::io(&self.path, e))
    }
}

pub const METRICS_HEADER: [&str; 4] = ["split", "loss_value", "hamming_error", "n_instances"];

pub fn write_metrics(path: &Path, rows: &[(String, Metrics)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(METRICS_HEADER)
        .map_err(|e| CliError::io(path, e))?;
    for (split, m) in rows {
        w.write_record([
            split.clone(),
            m.loss.to_string(),
            m.hamming_error.to_string(),
            m.instances.to_string(),
        ])
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes CSV rows to a file or, with no path, to stdout.
pub fn write_table(
    path: Option<&Path>,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let name = path.map_or_else(|| Path::new("<stdout>").to_path_buf(), Path::to_path_buf);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header).map_err(|e| CliError::io(&name, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(&name, e))?;
    }
    w.flush().map_err(|e| CliError::io(&name, e))
}

/// Binary PGM (P5) raster, thresholded at half the maximum grey value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryRaster, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5) file".into());
    }
    let mut num = |what: &str| -> Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let cols = num("width")?;
    let rows = num("height")?;
    let maxval = num("maximum value")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maximum value {maxval} out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = rows * cols * width;
    if bytes.len() < start + need {
        return Err(format!(
            "raster needs {need} bytes, file has {}",
            bytes.len().saturating_sub(start)
        ));
    }
    let data = &bytes[start..start + need];
    let pixels = data
        .chunks(width)
        .map(|c| {
            let v = if width == 1 {
                c[0] as usize
            } else {
                (c[0] as usize) << 8 | c[1] as usize
            };
            u8::from(2 * v > maxval)
        })
        .collect();
    Ok(BinaryRaster { rows, cols, pixels })
}

pub fn read_pgm(path: &Path) -> Result<BinaryRaster, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
