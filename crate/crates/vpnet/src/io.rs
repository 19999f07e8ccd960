//! File formats: labeled dataset CSV, heartbeat-window CSV ingestion,
//! versioned network checkpoints, and `key = value` configuration files.
//!
//! All writers emit decimal values with 17 significant digits, which is
//! enough for `f64` to round-trip bitwise; all readers validate strictly and
//! report failures as typed errors carrying the file path and line number.

use crate::error::{Error, Result};
use crate::hermite::SampleGrid;
use crate::nn::{LayerSpec, Network, PoolKind, VpMode};
use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Signals with integer class labels and optional per-sample metadata
/// (free-form key–value pairs, e.g. generator parameters).
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    signals: Vec<DVector<f64>>,
    labels: Vec<usize>,
    class_count: usize,
    metadata: Option<Vec<Vec<(String, String)>>>,
}

impl LabeledDataset {
    /// Validates shapes, label range, and finiteness.
    pub fn new(
        signals: Vec<DVector<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<LabeledDataset> {
        if signals.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if signals.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} signals but {} labels",
                signals.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument(
                "class count must be positive".into(),
            ));
        }
        let m = signals[0].len();
        if m == 0 {
            return Err(Error::InvalidArgument("signals are empty".into()));
        }
        for (i, s) in signals.iter().enumerate() {
            if s.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has {} values, expected {m}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i}")));
            }
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::InvalidArgument(format!(
                    "label {l} of sample {i} is outside the {class_count} classes"
                )));
            }
        }
        Ok(LabeledDataset {
            signals,
            labels,
            class_count,
            metadata: None,
        })
    }

    /// Attaches one metadata row per sample.
    pub fn with_metadata(mut self, metadata: Vec<Vec<(String, String)>>) -> Result<Self> {
        if metadata.len() != self.signals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} metadata rows for {} samples",
                metadata.len(),
                self.signals.len()
            )));
        }
        self.metadata = Some(metadata);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.signals[0].len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn signal(&self, i: usize) -> &DVector<f64> {
        &self.signals[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn metadata(&self) -> Option<&[Vec<(String, String)>]> {
        self.metadata.as_deref()
    }

    /// The selected samples stacked as rows of a matrix.
    pub fn signals_matrix(&self, indices: &[usize]) -> DMatrix<f64> {
        let m = self.signal_len();
        let mut out = DMatrix::zeros(indices.len(), m);
        for (row, &i) in indices.iter().enumerate() {
            for col in 0..m {
                out[(row, col)] = self.signals[i][col];
            }
        }
        out
    }

    /// A new dataset containing the selected samples (metadata included).
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let signals = indices.iter().map(|&i| self.signals[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = LabeledDataset::new(signals, labels, self.class_count)?;
        if let Some(meta) = &self.metadata {
            out = out.with_metadata(indices.iter().map(|&i| meta[i].clone()).collect())?;
        }
        Ok(out)
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `label,s0,...,s{m−1}` rows with full-precision decimals.
pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let m = dataset.signal_len();
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..m).map(|i| format!("s{i}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..dataset.len() {
        let mut fields = Vec::with_capacity(m + 1);
        fields.push(dataset.label(i).to_string());
        for v in dataset.signal(i).iter() {
            fields.push(format_value(*v));
        }
        w.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

struct ParsedRows {
    signals: Vec<DVector<f64>>,
    labels: Vec<usize>,
}

fn parse_dataset_rows(path: &Path) -> Result<ParsedRows> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::parse(
            path,
            1,
            "header must start with 'label'".to_string(),
        ));
    }
    let m = header.len() - 1;
    if m == 0 {
        return Err(Error::parse(path, 1, "header has no sample columns"));
    }
    for i in 0..m {
        let expected = format!("s{i}");
        if header.get(i + 1) != Some(expected.as_str()) {
            return Err(Error::parse(
                path,
                1,
                format!(
                    "unknown header column '{}', expected '{expected}'",
                    header.get(i + 1).unwrap_or("")
                ),
            ));
        }
    }

    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line_no = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        if record.len() != m + 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("row has {} fields, expected {}", record.len(), m + 1),
            ));
        }
        let label_field = record.get(0).unwrap_or("");
        let label: usize = label_field.trim().parse().map_err(|_| {
            Error::parse(path, line_no, format!("invalid label '{label_field}'"))
        })?;
        let mut signal = DVector::zeros(m);
        for j in 0..m {
            let field = record.get(j + 1).unwrap_or("");
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(path, line_no, format!("invalid number '{field}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("non-finite value '{field}'"),
                ));
            }
            signal[j] = v;
        }
        signals.push(signal);
        labels.push(label);
    }
    if signals.is_empty() {
        return Err(Error::parse(path, 2, "file contains no data rows"));
    }
    Ok(ParsedRows { signals, labels })
}

/// Loads a dataset, inferring the class count as `max label + 1`.
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let rows = parse_dataset_rows(path)?;
    let class_count = rows.labels.iter().max().map_or(0, |&l| l + 1);
    LabeledDataset::new(rows.signals, rows.labels, class_count)
}

/// Loads a dataset and validates every label against a known class count.
pub fn load_dataset_with_classes(path: &Path, class_count: usize) -> Result<LabeledDataset> {
    let rows = parse_dataset_rows(path)?;
    LabeledDataset::new(rows.signals, rows.labels, class_count)
}

/// Loads fixed-window heartbeat samples labeled 0 (normal) or 1 (ectopic).
/// Every row must contain exactly `window` samples.
pub fn load_heartbeats(path: &Path, window: usize) -> Result<LabeledDataset> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let rows = parse_dataset_rows(path)?;
    let found = rows.signals[0].len();
    if found != window {
        return Err(Error::InvalidArgument(format!(
            "expected heartbeat windows of {window} samples, found {found}"
        )));
    }
    if let Some(bad) = rows.labels.iter().position(|&l| l > 1) {
        return Err(Error::InvalidArgument(format!(
            "heartbeat labels must be 0 or 1, sample {bad} has {}",
            rows.labels[bad]
        )));
    }
    LabeledDataset::new(rows.signals, rows.labels, 2)
}

const CHECKPOINT_MAGIC: &str = "vpnet checkpoint";
const CHECKPOINT_VERSION: &str = "v1";

fn layer_line(index: usize, spec: &LayerSpec) -> Result<String> {
    Ok(match spec {
        LayerSpec::Vp { mode, grid, n } => {
            let (a, b) = grid.interval();
            // Only uniform grids are represented; verify the grid rebuilds
            // bitwise from its endpoints before persisting it.
            let rebuilt = SampleGrid::uniform(a, b, grid.len())?;
            if rebuilt.points() != grid.points() {
                return Err(Error::InvalidArgument(
                    "checkpoints support uniformly spaced sample grids only".into(),
                ));
            }
            let mode = match mode {
                VpMode::Feature => "feature",
                VpMode::Filter => "filter",
            };
            format!(
                "layer {index} vp {mode} {} {} {} {n}",
                format_value(a),
                format_value(b),
                grid.len()
            )
        }
        LayerSpec::Dense { input, output } => format!("layer {index} dense {input} {output}"),
        LayerSpec::Relu { len } => format!("layer {index} relu {len}"),
        LayerSpec::Softmax { len } => format!("layer {index} softmax {len}"),
        LayerSpec::Conv1d {
            input_len,
            channels,
            kernel,
        } => format!("layer {index} conv1d {input_len} {channels} {kernel}"),
        LayerSpec::Pool {
            channels,
            input_len,
            width,
            kind,
        } => {
            let kind = match kind {
                PoolKind::Mean => "mean",
                PoolKind::Max => "max",
            };
            format!("layer {index} pool {channels} {input_len} {width} {kind}")
        }
    })
}

/// Saves the network and an optional configuration snapshot as versioned
/// text. Parameter values are written in full precision, one per line.
pub fn save_checkpoint(
    network: &Network,
    config: &[(String, String)],
    path: &Path,
) -> Result<()> {
    for (i, p) in network.params().iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters of layer {i}")));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
    emit(format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"))?;
    emit(format!("layers {}", network.layers().len()))?;
    for (i, spec) in network.layers().iter().enumerate() {
        emit(layer_line(i, spec)?)?;
    }
    for (i, params) in network.params().iter().enumerate() {
        emit(format!("params {i} {}", params.len()))?;
        for v in params.iter() {
            emit(format_value(*v))?;
        }
    }
    emit(format!("config {}", config.len()))?;
    for (k, v) in config {
        emit(format!("{k} = {v}"))?;
    }
    emit("end".to_string())?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(LineReader {
            path,
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }

    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(line) => line.map_err(|e| Error::io(self.path, e)),
            None => Err(Error::parse(self.path, self.line_no, "unexpected end of file")),
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::parse(self.path, self.line_no, message))
    }
}

fn parse_usize(r: &LineReader, token: Option<&str>, what: &str) -> Result<usize> {
    match token.and_then(|t| t.parse().ok()) {
        Some(v) => Ok(v),
        None => r.fail(format!("expected {what}")),
    }
}

fn parse_f64(r: &LineReader, token: Option<&str>, what: &str) -> Result<f64> {
    match token.and_then(|t| t.parse::<f64>().ok()) {
        Some(v) if v.is_finite() => Ok(v),
        _ => r.fail(format!("expected finite {what}")),
    }
}

/// Loads a checkpoint saved by [`save_checkpoint`], returning the network
/// (parameters included) and the configuration snapshot.
pub fn load_checkpoint(path: &Path) -> Result<(Network, Vec<(String, String)>)> {
    let mut r = LineReader::open(path)?;

    let version_line = r.next()?;
    match version_line.strip_prefix(CHECKPOINT_MAGIC) {
        Some(rest) if rest.trim() == CHECKPOINT_VERSION => {}
        Some(rest) => {
            return Err(Error::UnsupportedVersion {
                found: rest.trim().to_string(),
                supported: CHECKPOINT_VERSION.to_string(),
            });
        }
        None => return r.fail(format!("not a checkpoint file: '{version_line}'")),
    }

    let count_line = r.next()?;
    let layer_count = match count_line.strip_prefix("layers ") {
        Some(n) => parse_usize(&r, Some(n.trim()), "layer count")?,
        None => return r.fail("expected 'layers <count>'"),
    };
    if layer_count == 0 {
        return r.fail("checkpoint declares zero layers");
    }

    let mut layers = Vec::with_capacity(layer_count);
    for expected in 0..layer_count {
        let line = r.next()?;
        let mut t = line.split_whitespace();
        if t.next() != Some("layer") {
            return r.fail(format!("expected 'layer {expected} ...', found '{line}'"));
        }
        let index = parse_usize(&r, t.next(), "layer index")?;
        if index != expected {
            return r.fail(format!("layer index {index}, expected {expected}"));
        }
        let kind = t.next().unwrap_or("");
        let spec = match kind {
            "vp" => {
                let mode = match t.next() {
                    Some("feature") => VpMode::Feature,
                    Some("filter") => VpMode::Filter,
                    other => {
                        return r.fail(format!("unknown projection mode {other:?}"));
                    }
                };
                let a = parse_f64(&r, t.next(), "grid start")?;
                let b = parse_f64(&r, t.next(), "grid end")?;
                let m = parse_usize(&r, t.next(), "grid size")?;
                let n = parse_usize(&r, t.next(), "basis count")?;
                LayerSpec::Vp {
                    mode,
                    grid: SampleGrid::uniform(a, b, m)?,
                    n,
                }
            }
            "dense" => LayerSpec::Dense {
                input: parse_usize(&r, t.next(), "input size")?,
                output: parse_usize(&r, t.next(), "output size")?,
            },
            "relu" => LayerSpec::Relu {
                len: parse_usize(&r, t.next(), "length")?,
            },
            "softmax" => LayerSpec::Softmax {
                len: parse_usize(&r, t.next(), "length")?,
            },
            "conv1d" => LayerSpec::Conv1d {
                input_len: parse_usize(&r, t.next(), "input length")?,
                channels: parse_usize(&r, t.next(), "channel count")?,
                kernel: parse_usize(&r, t.next(), "kernel width")?,
            },
            "pool" => {
                let channels = parse_usize(&r, t.next(), "channel count")?;
                let input_len = parse_usize(&r, t.next(), "input length")?;
                let width = parse_usize(&r, t.next(), "pool width")?;
                let kind = match t.next() {
                    Some("mean") => PoolKind::Mean,
                    Some("max") => PoolKind::Max,
                    other => return r.fail(format!("unknown pool kind {other:?}")),
                };
                LayerSpec::Pool {
                    channels,
                    input_len,
                    width,
                    kind,
                }
            }
            other => return r.fail(format!("unknown layer kind '{other}'")),
        };
        if t.next().is_some() {
            return r.fail(format!("trailing tokens on layer line '{line}'"));
        }
        layers.push(spec);
    }

    let mut network = Network::new(layers)?;
    for expected in 0..layer_count {
        let line = r.next()?;
        let mut t = line.split_whitespace();
        if t.next() != Some("params") {
            return r.fail(format!("expected 'params {expected} ...', found '{line}'"));
        }
        let index = parse_usize(&r, t.next(), "layer index")?;
        if index != expected {
            return r.fail(format!("params index {index}, expected {expected}"));
        }
        let len = parse_usize(&r, t.next(), "parameter count")?;
        let declared = network.params()[index].len();
        if len != declared {
            return r.fail(format!(
                "layer {index} declares {len} parameters, its shape needs {declared}"
            ));
        }
        for j in 0..len {
            let value_line = r.next()?;
            let v = parse_f64(&r, Some(value_line.trim()), "parameter value")?;
            network.params_mut()[index][j] = v;
        }
    }

    let line = r.next()?;
    let config_count = match line.strip_prefix("config ") {
        Some(n) => parse_usize(&r, Some(n.trim()), "config entry count")?,
        None => return r.fail("expected 'config <count>'"),
    };
    let mut config = Vec::with_capacity(config_count);
    for _ in 0..config_count {
        let line = r.next()?;
        match line.split_once('=') {
            Some((k, v)) => config.push((k.trim().to_string(), v.trim().to_string())),
            None => return r.fail(format!("expected 'key = value', found '{line}'")),
        }
    }
    let line = r.next()?;
    if line.trim() != "end" {
        return r.fail(format!("expected 'end', found '{line}'"));
    }
    Ok((network, config))
}

/// Parses a line-oriented `key = value` configuration file. Blank lines and
/// `#` comments are ignored; keys outside `allowed_keys` and duplicate keys
/// are rejected with their line number.
pub fn parse_config_file(path: &Path, allowed_keys: &[&str]) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<(String, String)> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, format!("expected 'key = value', found '{trimmed}'")))?;
        let key = key.trim();
        let value = value.trim();
        if !allowed_keys.contains(&key) {
            return Err(Error::parse(
                path,
                line_no,
                format!("unknown configuration key '{key}'"),
            ));
        }
        if entries.iter().any(|(k, _)| k == key) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate configuration key '{key}'"),
            ));
        }
        entries.push((key.to_string(), value.to_string()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network, VpMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Read;
    use tempfile::TempDir;

    fn sample_dataset() -> LabeledDataset {
        let signals = vec![
            DVector::from_vec(vec![0.1, 1.0 / 3.0, -0.0]),
            DVector::from_vec(vec![1e-300, 2.5e17, 0.30000000000000004]),
        ];
        LabeledDataset::new(signals, vec![0, 1], 2).unwrap()
    }

    #[test]
    fn dataset_validation_rules() {
        let s = vec![DVector::from_vec(vec![1.0, 2.0])];
        assert!(LabeledDataset::new(vec![], vec![], 2).is_err());
        assert!(LabeledDataset::new(s.clone(), vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(s.clone(), vec![2], 2).is_err());
        assert!(LabeledDataset::new(s.clone(), vec![0], 0).is_err());
        let nan = vec![DVector::from_vec(vec![f64::NAN, 0.0])];
        assert!(LabeledDataset::new(nan, vec![0], 1).is_err());
        let ragged = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0]),
        ];
        assert!(LabeledDataset::new(ragged, vec![0, 0], 1).is_err());
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("data.csv");
        let ds = sample_dataset();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.signal_len(), 3);
        assert_eq!(loaded.class_count(), 2);
        for i in 0..2 {
            assert_eq!(loaded.label(i), ds.label(i));
            for j in 0..3 {
                assert_eq!(
                    loaded.signal(i)[j].to_bits(),
                    ds.signal(i)[j].to_bits(),
                    "sample {i} value {j}"
                );
            }
        }
    }

    #[test]
    fn small_file_parses_with_inferred_classes() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "label,s0,s1,s2\n0,1.0,2.0,3.0\n1,4.0,5.0,6.0\n").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!((ds.len(), ds.signal_len(), ds.class_count()), (2, 3, 2));
    }

    #[test]
    fn dataset_parse_errors_carry_line_numbers() {
        let dir = TempDir::new().unwrap();
        let check = |content: &str, line: usize, needle: &str| {
            let path = dir.path().join("bad.csv");
            std::fs::write(&path, content).unwrap();
            match load_dataset(&path) {
                Err(Error::Parse {
                    line: found,
                    message,
                    ..
                }) => {
                    assert_eq!(found, line, "wrong line for {content:?}: {message}");
                    assert!(
                        message.contains(needle),
                        "message '{message}' lacks '{needle}'"
                    );
                }
                other => panic!("expected parse error for {content:?}, got {other:?}"),
            }
        };
        check("label,s0\n0,abc\n", 2, "abc");
        check("label,s0,s1\n0,1.0\n", 2, "fields");
        check("wrong,s0\n0,1.0\n", 1, "label");
        check("label,sX\n0,1.0\n", 1, "sX");
        check("label,s0\n", 2, "no data rows");
        check("", 1, "label");
        check("label,s0\n0,nan\n", 2, "non-finite");
        check("label,s0\n-1,1.0\n", 2, "label");
    }

    #[test]
    fn explicit_class_count_rejects_out_of_range_labels() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "label,s0\n0,1.0\n2,2.0\n").unwrap();
        assert!(load_dataset_with_classes(&path, 2).is_err());
        assert!(load_dataset_with_classes(&path, 3).is_ok());
    }

    #[test]
    fn heartbeat_loader_enforces_window_and_labels() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("beats.csv");

        let header: Vec<String> = std::iter::once("label".into())
            .chain((0..4).map(|i| format!("s{i}")))
            .collect();
        let mut content = header.join(",") + "\n";
        content.push_str("0,1.0,2.0,3.0,4.0\n1,4.0,3.0,2.0,1.0\n");
        std::fs::write(&path, &content).unwrap();
        let ds = load_heartbeats(&path, 4).unwrap();
        assert_eq!((ds.len(), ds.signal_len(), ds.class_count()), (2, 4, 2));

        let err = load_heartbeats(&path, 5).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('4'), "{err}");

        std::fs::write(&path, "label,s0\n").unwrap();
        assert!(load_heartbeats(&path, 1).is_err());

        std::fs::write(&path, "label,s0\n2,1.0\n").unwrap();
        assert!(load_heartbeats(&path, 1).is_err());
    }

    fn projection_network() -> Network {
        let grid = SampleGrid::unit(100).unwrap();
        Network::new(vec![
            LayerSpec::Vp {
                mode: VpMode::Feature,
                grid,
                n: 7,
            },
            LayerSpec::Dense {
                input: 7,
                output: 8,
            },
            LayerSpec::Relu { len: 8 },
            LayerSpec::Dense {
                input: 8,
                output: 3,
            },
            LayerSpec::Softmax { len: 3 },
        ])
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = projection_network();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        net.init_glorot(&mut rng);
        // Perturb the projection parameters away from their defaults.
        net.params_mut()[0][0] = 51.3e0;
        net.params_mut()[0][1] = 0.1234567890123456;
        assert_eq!(net.param_count(), 2 + 64 + 27);

        let config = vec![
            ("learning_rate".to_string(), "0.001".to_string()),
            ("epochs".to_string(), "100".to_string()),
        ];
        save_checkpoint(&net, &config, &path).unwrap();
        let (loaded, loaded_config) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_config, config);
        assert_eq!(loaded.param_count(), net.param_count());
        assert_eq!(loaded.layers().len(), net.layers().len());
        for (a, b) in loaded.params().iter().zip(net.params()) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_rejects_truncation_everywhere() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = projection_network();
        save_checkpoint(&net, &[], &path).unwrap();
        let mut full = String::new();
        File::open(&path)
            .unwrap()
            .read_to_string(&mut full)
            .unwrap();
        let lines: Vec<&str> = full.lines().collect();
        let cut = dir.path().join("cut.ckpt");
        for keep in 0..lines.len() {
            std::fs::write(&cut, lines[..keep].join("\n")).unwrap();
            assert!(
                load_checkpoint(&cut).is_err(),
                "truncation at line {keep} was accepted"
            );
        }
    }

    #[test]
    fn checkpoint_version_and_garbage_rejection() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, "vpnet checkpoint v9\nlayers 1\n").unwrap();
        match load_checkpoint(&path) {
            Err(Error::UnsupportedVersion { found, supported }) => {
                assert_eq!(found, "v9");
                assert_eq!(supported, "v1");
            }
            other => panic!("expected version error, got {other:?}"),
        }
        std::fs::write(&path, "hello world\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "vpnet checkpoint v1\nlayers 1\nlayer 0 dense 2 0\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn checkpoint_rejects_non_finite_parameters() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = projection_network();
        net.params_mut()[1][0] = f64::NAN;
        assert!(save_checkpoint(&net, &[], &path).is_err());
    }

    #[test]
    fn config_parser_accepts_comments_and_rejects_unknown_keys() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# experiment settings\nlearning_rate = 0.001\n\nepochs = 50\n",
        )
        .unwrap();
        let entries = parse_config_file(&path, &["learning_rate", "epochs"]).unwrap();
        assert_eq!(
            entries,
            vec![
                ("learning_rate".to_string(), "0.001".to_string()),
                ("epochs".to_string(), "50".to_string()),
            ]
        );

        match parse_config_file(&path, &["epochs"]) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("learning_rate"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "epochs = 1\nepochs = 2\n").unwrap();
        match parse_config_file(&path, &["epochs"]) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "just some text\n").unwrap();
        assert!(parse_config_file(&path, &["epochs"]).is_err());
    }

    #[test]
    fn subset_and_matrix_views_are_consistent() {
        let ds = sample_dataset()
            .with_metadata(vec![
                vec![("tau".into(), "1".into())],
                vec![("tau".into(), "2".into())],
            ])
            .unwrap();
        let sub = ds.subset(&[1]).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.label(0), 1);
        assert_eq!(sub.metadata().unwrap()[0][0].1, "2");
        let m = ds.signals_matrix(&[1, 0]);
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(0, 1)], ds.signal(1)[1]);
        assert_eq!(m[(1, 0)], ds.signal(0)[0]);
    }
}
