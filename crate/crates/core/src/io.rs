//! File formats: networks, datasets, IDX images and reports.
//!
//! Network files are JSON with every weight written to 17 significant
//! digits, so a save/load round trip is bit-exact. Datasets are CSV with a
//! metadata comment line carrying `n`, `k` and `B`. Reports come in JSON and
//! CSV flavours with numbers in scientific notation to 6 significant digits.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use serde_json::Value;

use crate::bounds::{BoundReport, CONVENTION};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::network::{Network, NetworkKind};
use crate::verify::{histogram_labels, SuiteSummary};

pub const NETWORK_FORMAT: &str = "specbound-net-v1";
pub const DATASET_FORMAT: &str = "specbound-data-v1";
pub const REPORT_FORMAT: &str = "specbound-report-v1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- networks

pub fn network_to_string(net: &Network) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"format\": \"{NETWORK_FORMAT}\",");
    let _ = writeln!(s, "  \"kind\": \"{}\",", net.kind().as_str());
    s.push_str("  \"activation\": \"relu\",\n");
    s.push_str("  \"layers\": [\n");
    for (i, w) in net.layers().iter().enumerate() {
        let data: Vec<String> = w.data().iter().map(|v| format!("{v:.16e}")).collect();
        let _ = write!(
            s,
            "    {{\"rows\": {}, \"cols\": {}, \"data\": [{}]}}",
            w.rows(),
            w.cols(),
            data.join(", ")
        );
        s.push_str(if i + 1 < net.depth() { ",\n" } else { "\n" });
    }
    s.push_str("  ]\n}\n");
    s
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    write(path, &network_to_string(net))
}

pub fn load_network(path: &Path) -> Result<Network> {
    network_from_str(&read(path)?, &path.display().to_string())
}

/// Parse a network document; `source` names the document in errors.
pub fn network_from_str(text: &str, source: &str) -> Result<Network> {
    let fail = |field: &str, msg: String| Error::format(source, field, msg);
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        fail(&format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let root = doc
        .as_object()
        .ok_or_else(|| fail("$", "expected an object".into()))?;
    let string_field = |name: &str| -> Result<&str> {
        root.get(name)
            .ok_or_else(|| fail(name, "missing field".into()))?
            .as_str()
            .ok_or_else(|| fail(name, "expected a string".into()))
    };
    let format = string_field("format")?;
    if format != NETWORK_FORMAT {
        return Err(fail("format", format!("expected {NETWORK_FORMAT:?}, got {format:?}")));
    }
    let kind_str = string_field("kind")?;
    let kind = NetworkKind::parse(kind_str)
        .ok_or_else(|| fail("kind", format!("unknown kind {kind_str:?}")))?;
    let activation = string_field("activation")?;
    if activation != "relu" {
        return Err(fail("activation", format!("unsupported activation {activation:?}")));
    }
    let layers_json = root
        .get("layers")
        .ok_or_else(|| fail("layers", "missing field".into()))?
        .as_array()
        .ok_or_else(|| fail("layers", "expected an array".into()))?;
    if layers_json.is_empty() {
        return Err(fail("layers", "network needs at least one layer".into()));
    }
    let mut layers = Vec::with_capacity(layers_json.len());
    for (i, layer) in layers_json.iter().enumerate() {
        let path = format!("layers[{i}]");
        let dim = |name: &str| -> Result<usize> {
            let field = format!("{path}.{name}");
            layer
                .get(name)
                .ok_or_else(|| fail(&field, "missing field".into()))?
                .as_u64()
                .filter(|&v| v > 0)
                .map(|v| v as usize)
                .ok_or_else(|| fail(&field, "expected a positive integer".into()))
        };
        let (rows, cols) = (dim("rows")?, dim("cols")?);
        let data_field = format!("{path}.data");
        let data_json = layer
            .get("data")
            .ok_or_else(|| fail(&data_field, "missing field".into()))?
            .as_array()
            .ok_or_else(|| fail(&data_field, "expected an array".into()))?;
        if data_json.len() != rows * cols {
            return Err(fail(
                &data_field,
                format!("expected {} entries for {rows}x{cols}, got {}", rows * cols, data_json.len()),
            ));
        }
        let data = data_json
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail(&format!("{data_field}[{j}]"), "expected a finite number".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        if kind == NetworkKind::Resnet && i > 0 && rows != cols {
            return Err(fail(&path, format!("resnet layer must be square, got {rows}x{cols}")));
        }
        layers.push(Matrix::new(rows, cols, data).map_err(|e| fail(&path, e.to_string()))?);
    }
    Network::new(kind, layers).map_err(|e| fail("layers", e.to_string()))
}

// ---------------------------------------------------------------- datasets

pub fn dataset_to_string(data: &Dataset) -> String {
    let mut s = format!(
        "# {DATASET_FORMAT} n={} k={} B={:.16e}\nlabel",
        data.n(),
        data.k(),
        data.b()
    );
    for j in 0..data.n() {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for sample in data.samples() {
        let _ = write!(s, "{}", sample.y);
        for v in &sample.x {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write(path, &dataset_to_string(data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_str(&read(path)?, &path.display().to_string())
}

fn parse_meta(line: &str, source: &str) -> Result<(usize, usize, f64)> {
    let fail = |msg: String| Error::format(source, "line 1", msg);
    let mut parts = line
        .strip_prefix('#')
        .ok_or_else(|| fail("missing metadata comment".into()))?
        .split_whitespace();
    if parts.next() != Some(DATASET_FORMAT) {
        return Err(fail(format!("expected {DATASET_FORMAT} tag")));
    }
    let (mut n, mut k, mut b) = (None, None, None);
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| fail(format!("bad metadata entry {part:?}")))?;
        let bad = || fail(format!("bad value for {key}: {value:?}"));
        match key {
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
            "k" => k = Some(value.parse::<usize>().map_err(|_| bad())?),
            "B" => b = Some(value.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(fail(format!("unknown metadata key {key:?}"))),
        }
    }
    match (n, k, b) {
        (Some(n), Some(k), Some(b)) => Ok((n, k, b)),
        _ => Err(fail("metadata needs n, k and B".into())),
    }
}

/// Parse a dataset document; the stored `B` is re-validated against every
/// sample.
pub fn dataset_from_str(text: &str, source: &str) -> Result<Dataset> {
    let (meta, body) = text.split_once('\n').unwrap_or((text, ""));
    let (n, k, b) = parse_meta(meta.trim_end(), source)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format(source, "line 2", e.to_string()))?
        .clone();
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((0..n).map(|j| format!("x{j}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(source, "line 2", format!("expected header {}", expected.join(","))));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = format!("line {}", row + 3);
        let record = record.map_err(|e| Error::format(source, &line, e.to_string()))?;
        let y = record[0]
            .parse::<usize>()
            .map_err(|_| Error::format(source, format!("{line} column label"), format!("bad label {:?}", &record[0])))?;
        let x = (1..=n)
            .map(|c| {
                record[c].parse::<f64>().map_err(|_| {
                    Error::format(source, format!("{line} column x{}", c - 1), format!("bad number {:?}", &record[c]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample { x, y });
    }
    Dataset::new(samples, n, k, b).map_err(|e| Error::format(source, "samples", e.to_string()))
}

// ---------------------------------------------------------------- IDX

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

struct IdxReader<'a> {
    cursor: Cursor<&'a [u8]>,
    source: String,
}

impl IdxReader<'_> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let offset = self.cursor.position();
        self.cursor
            .read_u32::<BigEndian>()
            .map_err(|_| Error::format(&self.source, format!("{field} at byte offset {offset}"), "truncated file"))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let got = self.u32("magic")?;
        if got != magic {
            return Err(Error::format(
                &self.source,
                "magic at byte offset 0",
                format!("expected {magic:#010x}, got {got:#010x}"),
            ));
        }
        Ok(())
    }

    fn bytes(&mut self, len: usize, field: &str) -> Result<&[u8]> {
        let start = self.cursor.position() as usize;
        let data = *self.cursor.get_ref();
        if data.len() < start + len {
            return Err(Error::format(
                &self.source,
                format!("{field} at byte offset {}", data.len()),
                format!("truncated file: need {len} bytes from offset {start}"),
            ));
        }
        self.cursor.set_position((start + len) as u64);
        Ok(&data[start..start + len])
    }
}

/// Load IDX images and labels. Pixels are scaled to `[0, 1]` and flattened
/// row-major, then all images are scaled by one factor so the largest has
/// norm `b_scale`. The dataset's `B` is that largest norm.
pub fn load_idx(images: &Path, labels: &Path, max_count: Option<usize>, b_scale: f64) -> Result<Dataset> {
    let image_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let label_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    idx_from_bytes(
        &image_bytes,
        &label_bytes,
        max_count,
        b_scale,
        (&images.display().to_string(), &labels.display().to_string()),
    )
}

/// [`load_idx`] on in-memory file contents; `sources` names the two files.
pub fn idx_from_bytes(
    images: &[u8],
    labels: &[u8],
    max_count: Option<usize>,
    b_scale: f64,
    sources: (&str, &str),
) -> Result<Dataset> {
    if !(b_scale > 0.0) || !b_scale.is_finite() {
        return Err(Error::usage(format!("B scale must be > 0, got {b_scale}")));
    }
    let mut img = IdxReader { cursor: Cursor::new(images), source: sources.0.to_string() };
    let mut lab = IdxReader { cursor: Cursor::new(labels), source: sources.1.to_string() };
    img.expect_magic(IDX_IMAGES)?;
    lab.expect_magic(IDX_LABELS)?;
    let count = img.u32("image count")? as usize;
    let rows = img.u32("row count")? as usize;
    let cols = img.u32("column count")? as usize;
    let label_count = lab.u32("label count")? as usize;
    if count != label_count {
        return Err(Error::format(
            sources.1,
            "label count at byte offset 4",
            format!("{label_count} labels for {count} images"),
        ));
    }
    let take = max_count.map_or(count, |c| c.min(count));
    let n = rows * cols;
    if take == 0 || n == 0 {
        return Err(Error::usage("IDX files hold no usable samples"));
    }
    let pixels = img.bytes(take * n, "pixel data")?;
    let ys = lab.bytes(take, "label data")?;
    let raw: Vec<Vec<f64>> = pixels
        .chunks(n)
        .map(|c| c.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    let max_norm = raw.iter().map(|x| norm2(x)).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(Error::numeric("all images are blank; cannot scale to B"));
    }
    let s = b_scale / max_norm;
    let samples: Vec<Sample> = raw
        .into_iter()
        .zip(ys)
        .map(|(x, &y)| Sample { x: x.iter().map(|v| v * s).collect(), y: usize::from(y) })
        .collect();
    let b = samples.iter().map(|s| norm2(&s.x)).fold(0.0, f64::max);
    let k = samples.iter().map(|s| s.y + 1).max().unwrap_or(2).max(2);
    Dataset::new(samples, n, k, b)
}

// ---------------------------------------------------------------- reports

/// A JSON-like value whose numbers render in 6-significant-digit
/// scientific notation.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(u64),
    Str(String),
    Bool(bool),
    Null,
    List(Vec<Field>),
    Obj(Vec<(String, Field)>),
}

impl Field {
    fn obj<K: Into<String>>(entries: Vec<(K, Field)>) -> Field {
        Field::Obj(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    fn opt_num(v: Option<f64>) -> Field {
        v.map_or(Field::Null, Field::Num)
    }
}

/// `{:.5e}`; non-finite values become `inf`, `-inf` or `nan`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn render_json(field: &Field, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent + 1);
    match field {
        Field::Num(v) if v.is_finite() => out.push_str(&format_number(*v)),
        Field::Num(v) => out.push_str(&serde_json::to_string(&format_number(*v)).expect("string")),
        Field::Int(v) => out.push_str(&v.to_string()),
        Field::Str(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Field::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Field::Null => out.push_str("null"),
        Field::List(items) if items.is_empty() => out.push_str("[]"),
        Field::List(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad);
                render_json(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        Field::Obj(entries) if entries.is_empty() => out.push_str("{}"),
        Field::Obj(entries) => {
            out.push_str("{\n");
            for (i, (k, v)) in entries.iter().enumerate() {
                out.push_str(&pad);
                out.push_str(&serde_json::to_string(k).expect("string"));
                out.push_str(": ");
                render_json(v, indent + 1, out);
                out.push_str(if i + 1 < entries.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
    }
}

fn flatten(prefix: &str, field: &Field, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match field {
        Field::Num(v) => out.push((prefix.to_string(), format_number(*v))),
        Field::Int(v) => out.push((prefix.to_string(), v.to_string())),
        Field::Str(s) => out.push((prefix.to_string(), s.clone())),
        Field::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Field::Null => out.push((prefix.to_string(), String::new())),
        Field::List(items) => {
            for (i, item) in items.iter().enumerate() {
                flatten(&key(&(i + 1).to_string()), item, out);
            }
        }
        Field::Obj(entries) => {
            for (k, v) in entries {
                flatten(&key(k), v, out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }

    /// Format implied by a file extension, JSON by default.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::usage(format!("unknown report format {s:?}"))),
        }
    }
}

/// Where a report came from; two reports are comparable only when the
/// convention flags match.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub tool_version: String,
    pub convention: String,
    pub union_bound: bool,
}

impl Provenance {
    pub fn new(seed: Option<u64>, union_bound: bool) -> Self {
        Provenance {
            seed,
            tool_version: TOOL_VERSION.to_string(),
            convention: CONVENTION.to_string(),
            union_bound,
        }
    }

    fn field(&self) -> Field {
        Field::obj(vec![
            ("seed", self.seed.map_or(Field::Null, Field::Int)),
            ("tool_version", Field::Str(self.tool_version.clone())),
            ("convention", Field::Str(self.convention.clone())),
            ("union_bound", Field::Bool(self.union_bound)),
        ])
    }
}

/// A report document: provenance, document-level summary fields and a list
/// of records. CSV output has one row per record, with summary and
/// provenance fields repeated as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: String,
    pub provenance: Provenance,
    pub summary: Vec<(String, Field)>,
    pub records: Vec<Field>,
}

impl Report {
    pub fn new(kind: &str, provenance: Provenance) -> Self {
        Report {
            kind: kind.to_string(),
            provenance,
            summary: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn with_summary(mut self, key: &str, value: Field) -> Self {
        self.summary.push((key.to_string(), value));
        self
    }

    pub fn with_records(mut self, records: impl IntoIterator<Item = Field>) -> Self {
        self.records.extend(records);
        self
    }

    pub fn to_json(&self) -> String {
        let doc = Field::obj(vec![
            ("format", Field::Str(REPORT_FORMAT.to_string())),
            ("kind", Field::Str(self.kind.clone())),
            ("provenance", self.provenance.field()),
            ("summary", Field::Obj(self.summary.clone())),
            ("records", Field::List(self.records.clone())),
        ]);
        let mut out = String::new();
        render_json(&doc, 0, &mut out);
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut shared = Vec::new();
        flatten("", &Field::Obj(self.summary.clone()), &mut shared);
        flatten("provenance", &self.provenance.field(), &mut shared);
        let rows: Vec<Vec<(String, String)>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = Vec::new();
                flatten("", r, &mut row);
                row.extend(shared.iter().cloned());
                row
            })
            .collect();
        let mut header: Vec<String> = Vec::new();
        for row in &rows {
            for (k, _) in row {
                if !header.contains(k) {
                    header.push(k.clone());
                }
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let encode = |e: csv::Error| Error::numeric(format!("csv encoding failed: {e}"));
        w.write_record(&header).map_err(encode)?;
        for row in &rows {
            let cells = header.iter().map(|h| {
                row.iter()
                    .find(|(k, _)| k == h)
                    .map_or("", |(_, v)| v.as_str())
            });
            w.write_record(cells).map_err(encode)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => Ok(self.to_json()),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

pub fn write_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    write(path, &report.render(format)?)
}

impl From<&BoundReport> for Field {
    fn from(r: &BoundReport) -> Field {
        let i = &r.inputs;
        Field::obj(vec![
            ("theorem_tag", Field::Str(r.theorem_tag.as_str().to_string())),
            ("bound_value", Field::Num(r.bound_value)),
            ("phi", Field::Num(r.phi)),
            ("beta", Field::Num(r.beta)),
            ("sigma", Field::Num(r.sigma)),
            ("kl_upper", Field::Num(r.kl_upper)),
            ("magnitude", Field::Num(r.magnitude)),
            ("c_fgm", Field::opt_num(r.c_fgm)),
            ("depth", Field::Int(r.depth as u64)),
            ("width", Field::Int(r.width as u64)),
            (
                "inputs",
                Field::obj(vec![
                    ("B", Field::Num(i.b)),
                    ("epsilon", Field::Num(i.epsilon)),
                    ("gamma", Field::Num(i.gamma)),
                    ("delta", Field::Num(i.delta)),
                    ("m", Field::Int(i.m as u64)),
                    ("n", Field::Int(i.n as u64)),
                    ("p", Field::Str(i.p.as_str().to_string())),
                    ("kappa", Field::opt_num(i.kappa)),
                    ("D", Field::opt_num(i.d_bound)),
                    ("union_bound", Field::Bool(i.union_bound)),
                ]),
            ),
            (
                "per_layer",
                Field::List(
                    r.per_layer
                        .iter()
                        .map(|l| {
                            Field::obj(vec![
                                ("spectral", Field::Num(l.spectral)),
                                ("frobenius", Field::Num(l.frobenius)),
                            ])
                        })
                        .collect(),
                ),
            ),
        ])
    }
}

impl From<&SuiteSummary> for Field {
    fn from(s: &SuiteSummary) -> Field {
        Field::obj(vec![
            ("suite", Field::Str(s.name.clone())),
            ("trials", Field::Int(s.trials as u64)),
            ("violations", Field::Int(s.violations as u64)),
            ("inconclusive", Field::Int(s.inconclusive as u64)),
            ("passed", Field::Bool(s.passed())),
            ("min_slack", Field::Num(s.min_slack)),
            (
                "slack_histogram",
                Field::Obj(
                    histogram_labels()
                        .into_iter()
                        .zip(&s.histogram)
                        .map(|(l, &c)| (l.to_string(), Field::Int(c as u64)))
                        .collect(),
                ),
            ),
        ])
    }
}

/// Report document for a set of bound reports.
pub fn bound_report(reports: &[BoundReport], seed: Option<u64>) -> Report {
    let union = reports.iter().any(|r| r.inputs.union_bound);
    Report::new("bounds", Provenance::new(seed, union)).with_records(reports.iter().map(Field::from))
}

/// Report document for verification suites.
pub fn suite_report(summaries: &[SuiteSummary], seed: u64) -> Report {
    let violations: usize = summaries.iter().map(|s| s.violations).sum();
    Report::new("verify", Provenance::new(Some(seed), false))
        .with_summary("suites", Field::Int(summaries.len() as u64))
        .with_summary("violations", Field::Int(violations as u64))
        .with_records(summaries.iter().map(Field::from))
}
