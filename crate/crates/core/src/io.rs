//! Text file formats.
//!
//! Every file starts with a `# pedcc-<kind> v1 ...` header line, optionally
//! followed by a `# config=<hash>` provenance line. Floating-point values are
//! written with 17 significant digits so a read/write cycle reproduces the
//! file byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluate::{MethodRow, Report, TunedOmega, VarianceReport};
use crate::frame::CentroidFrame;
use crate::geometry::{Decomposed, ScoreRecord};
use crate::trainer::{Activation, EmbeddingSet, Layer, Model, NetworkSpec, Role};

pub const FRAME_TAG: &str = "pedcc-frame";
pub const EMBED_TAG: &str = "pedcc-embed";
pub const MODEL_TAG: &str = "pedcc-model";
pub const SCORES_TAG: &str = "pedcc-scores";
pub const REPORT_TAG: &str = "pedcc-report";
pub const HISTORY_TAG: &str = "pedcc-history";
pub const TUNING_TAG: &str = "pedcc-tuning";
pub const VERSION: &str = "v1";

pub const SCORES_HEADER: &str = "index,label,cos_alpha,s_beta,s_pedcc,s_d_pedcc";
pub const REPORT_HEADER: &str = "method,auroc,tnr_at_tpr95,threshold,omega,n_id,n_ood";

/// A parsed file body with its provenance hash, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagged<T> {
    pub value: T,
    pub config: Option<String>,
}

/// 17 significant digits, round-trip exact for `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn provenance(out: &mut String, config: Option<&str>) {
    if let Some(hash) = config {
        let _ = writeln!(out, "# config={hash}");
    }
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Line cursor that tracks 1-based line numbers for error messages.
struct Lines<'a> {
    path: PathBuf,
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        Self {
            path: path.to_path_buf(),
            iter: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        let (i, line) = self.iter.next()?;
        self.last = i + 1;
        Some(line)
    }

    fn peek(&mut self) -> Option<&'a str> {
        self.iter.peek().map(|(_, l)| *l)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, self.last, msg)
    }

    /// Reads the `# <tag> v1 k=v ...` header and returns its key/value pairs.
    fn header(&mut self, tag: &str) -> Result<Vec<(&'a str, &'a str)>> {
        let line = self.next().ok_or_else(|| self.err("empty file"))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("#") || parts.next() != Some(tag) {
            return Err(self.err(format!("expected '# {tag} {VERSION}' header")));
        }
        if parts.next() != Some(VERSION) {
            return Err(self.err(format!("unsupported {tag} version, expected {VERSION}")));
        }
        parts
            .map(|kv| {
                kv.split_once('=')
                    .ok_or_else(|| self.err(format!("malformed header field '{kv}'")))
            })
            .collect()
    }

    /// Consumes consecutive `# key=value` comment lines.
    fn comments(&mut self) -> Vec<(&'a str, &'a str)> {
        let mut out = Vec::new();
        while let Some(l) = self.peek() {
            let Some(rest) = l.strip_prefix("# ") else { break };
            let Some(kv) = rest.split_once('=') else { break };
            self.next();
            out.push(kv);
        }
        out
    }

    fn parse_f64(&self, s: &str) -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| self.err(format!("invalid number '{s}'")))
    }

    fn parse_usize(&self, s: &str) -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|_| self.err(format!("invalid integer '{s}'")))
    }

    fn parse_label(&self, s: &str) -> Result<Option<usize>> {
        let v: i64 = s
            .trim()
            .parse()
            .map_err(|_| self.err(format!("invalid label '{s}'")))?;
        match v {
            -1 => Ok(None),
            v if v >= 0 => Ok(Some(v as usize)),
            _ => Err(self.err(format!("label {v} must be >= 0 or -1"))),
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn lookup<'a>(fields: &[(&'a str, &'a str)], key: &str) -> Option<&'a str> {
    fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn config_of(comments: &[(&str, &str)]) -> Option<String> {
    lookup(comments, "config").map(str::to_string)
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}

// ---- frame ----

pub fn format_frame(frame: &CentroidFrame, config: Option<&str>) -> String {
    let mut out = format!(
        "# {FRAME_TAG} {VERSION} C={} D={} seed={}\n",
        frame.num_classes(),
        frame.dim(),
        frame.seed()
    );
    provenance(&mut out, config);
    for c in frame.centroids() {
        out.push_str(&join_f64(c));
        out.push('\n');
    }
    out
}

pub fn write_frame(path: impl AsRef<Path>, frame: &CentroidFrame, config: Option<&str>) -> Result<()> {
    write_text(path, &format_frame(frame, config))
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Tagged<CentroidFrame>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut lines = Lines::new(path, &text);
    let header = lines.header(FRAME_TAG)?;
    let field = |k: &str| lookup(&header, k).ok_or_else(|| Error::parse(path, 1, format!("header missing {k}")));
    let c = lines.parse_usize(field("C")?)?;
    let d = lines.parse_usize(field("D")?)?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::parse(path, 1, "invalid seed"))?;
    let config = config_of(&lines.comments());

    let mut centroids = Vec::with_capacity(c);
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| lines.parse_f64(v))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != d {
            return Err(lines.err(format!("row has {} values, header says D={d}", row.len())));
        }
        centroids.push(row);
    }
    if centroids.len() != c {
        return Err(Error::parse(
            path,
            lines.last,
            format!("found {} centroid rows, header says C={c}", centroids.len()),
        ));
    }
    let frame = CentroidFrame::from_centroids(centroids, seed).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok(Tagged { value: frame, config })
}

// ---- embeddings ----

pub fn format_embeddings(set: &EmbeddingSet, config: Option<&str>) -> String {
    let mut out = format!("# {EMBED_TAG} {VERSION} D={}\n# role={}\n", set.dim(), set.role());
    provenance(&mut out, config);
    for (v, label) in set.vectors().iter().zip(set.signed_labels()) {
        let _ = writeln!(out, "{label},{}", join_f64(v));
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet, config: Option<&str>) -> Result<()> {
    write_text(path, &format_embeddings(set, config))
}

/// Reads an embedding CSV. Without a `# role=` line the role is `ood` when
/// every row is unlabeled and `id-test` otherwise.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Tagged<EmbeddingSet>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut lines = Lines::new(path, &text);
    let header = lines.header(EMBED_TAG)?;
    let d = lines.parse_usize(lookup(&header, "D").ok_or_else(|| lines.err("header missing D"))?)?;
    if d == 0 {
        return Err(lines.err("D must be positive"));
    }
    let comments = lines.comments();
    let role = lookup(&comments, "role")
        .map(|r| r.parse::<Role>().map_err(|e| Error::parse(path, 2, e.to_string())))
        .transpose()?;

    let mut set = EmbeddingSet::new(d, role.unwrap_or(Role::IdTest));
    while let Some(line) = lines.next() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label = lines.parse_label(fields.next().unwrap_or(""))?;
        let v = fields.map(|x| lines.parse_f64(x)).collect::<Result<Vec<f64>>>()?;
        if v.len() != d {
            return Err(lines.err(format!(
                "row has dimension {}, header says D={d}",
                v.len()
            )));
        }
        set.push(v, label)?;
    }
    if role.is_none() && !set.is_empty() && set.labels().iter().all(Option::is_none) {
        set = set.with_role(Role::Ood);
    }
    Ok(Tagged {
        value: set,
        config: config_of(&comments),
    })
}

// ---- model checkpoint ----

pub fn format_model(model: &Model, config: Option<&str>) -> String {
    let s = &model.spec;
    let hidden = s
        .hidden_dims
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut out = format!(
        "# {MODEL_TAG} {VERSION} input_dim={} hidden={} feature_dim={} activation={} seed={}\n",
        s.input_dim,
        if hidden.is_empty() { "-" } else { &hidden },
        s.feature_dim,
        s.activation,
        s.seed
    );
    provenance(&mut out, config);
    for (k, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(out, "layer {k} {} {}", layer.outputs(), layer.inputs());
        for row in &layer.weights {
            out.push_str(&join_f64(row));
            out.push('\n');
        }
        out.push_str(&join_f64(&layer.bias));
        out.push('\n');
    }
    out
}

pub fn write_model(path: impl AsRef<Path>, model: &Model, config: Option<&str>) -> Result<()> {
    write_text(path, &format_model(model, config))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Tagged<Model>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut lines = Lines::new(path, &text);
    let header = lines.header(MODEL_TAG)?;
    let field = |k: &str| lookup(&header, k).ok_or_else(|| Error::parse(path, 1, format!("header missing {k}")));
    let hidden_dims = match field("hidden")? {
        "-" => Vec::new(),
        h => h
            .split(',')
            .map(|x| lines.parse_usize(x))
            .collect::<Result<Vec<_>>>()?,
    };
    let spec = NetworkSpec {
        input_dim: lines.parse_usize(field("input_dim")?)?,
        hidden_dims,
        feature_dim: lines.parse_usize(field("feature_dim")?)?,
        activation: field("activation")?
            .parse::<Activation>()
            .map_err(|e| Error::parse(path, 1, e.to_string()))?,
        seed: field("seed")?
            .parse()
            .map_err(|_| Error::parse(path, 1, "invalid seed"))?,
    };
    let config = config_of(&lines.comments());

    let mut layers = Vec::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "layer" {
            return Err(lines.err("expected 'layer <k> <out> <in>'"));
        }
        if lines.parse_usize(parts[1])? != layers.len() {
            return Err(lines.err("layers out of order"));
        }
        let outputs = lines.parse_usize(parts[2])?;
        let inputs = lines.parse_usize(parts[3])?;
        let mut read_row = |n: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| lines.err("unexpected end of file"))?;
            let row = line
                .split(',')
                .map(|v| lines.parse_f64(v))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != n {
                return Err(lines.err(format!("expected {n} values, found {}", row.len())));
            }
            Ok(row)
        };
        let weights = (0..outputs)
            .map(|_| read_row(inputs))
            .collect::<Result<Vec<_>>>()?;
        let bias = read_row(outputs)?;
        layers.push(Layer { weights, bias });
    }
    let model = Model { spec, layers };
    model
        .validate()
        .map_err(|e| Error::parse(path, lines.last, e.to_string()))?;
    Ok(Tagged { value: model, config })
}

// ---- scores ----

/// One row of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub index: usize,
    pub label: Option<usize>,
    pub cos_alpha: f64,
    pub s_beta: f64,
    pub s_pedcc: f64,
    pub s_d_pedcc: f64,
}

impl Decomposed for ScoreRow {
    fn s_alpha(&self) -> f64 {
        self.cos_alpha
    }
    fn s_beta(&self) -> f64 {
        self.s_beta
    }
    fn s_pedcc(&self) -> f64 {
        self.s_pedcc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub omega: f64,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn from_records(records: &[ScoreRecord], labels: &[Option<usize>], omega: f64) -> Self {
        let rows = records
            .iter()
            .enumerate()
            .map(|(i, r)| ScoreRow {
                index: i,
                label: labels.get(i).copied().flatten(),
                cos_alpha: r.cos_alpha,
                s_beta: r.s_beta,
                s_pedcc: r.s_pedcc,
                s_d_pedcc: r.s_d_pedcc,
            })
            .collect();
        Self { omega, rows }
    }
}

pub fn format_scores(table: &ScoreTable, config: Option<&str>) -> String {
    let mut out = format!("# {SCORES_TAG} {VERSION} omega={}\n", fmt_f64(table.omega));
    provenance(&mut out, config);
    out.push_str(SCORES_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.index,
            r.label.map_or(-1, |l| l as i64),
            fmt_f64(r.cos_alpha),
            fmt_f64(r.s_beta),
            fmt_f64(r.s_pedcc),
            fmt_f64(r.s_d_pedcc)
        );
    }
    out
}

pub fn write_scores(path: impl AsRef<Path>, table: &ScoreTable, config: Option<&str>) -> Result<()> {
    write_text(path, &format_scores(table, config))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Tagged<ScoreTable>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut lines = Lines::new(path, &text);
    let header = lines.header(SCORES_TAG)?;
    let omega = lines.parse_f64(lookup(&header, "omega").ok_or_else(|| lines.err("header missing omega"))?)?;
    let config = config_of(&lines.comments());
    match lines.next() {
        Some(h) if h.trim() == SCORES_HEADER => {}
        _ => return Err(lines.err(format!("expected column header '{SCORES_HEADER}'"))),
    }
    let mut rows = Vec::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(lines.err(format!("expected 6 columns, found {}", f.len())));
        }
        rows.push(ScoreRow {
            index: lines.parse_usize(f[0])?,
            label: lines.parse_label(f[1])?,
            cos_alpha: lines.parse_f64(f[2])?,
            s_beta: lines.parse_f64(f[3])?,
            s_pedcc: lines.parse_f64(f[4])?,
            s_d_pedcc: lines.parse_f64(f[5])?,
        });
    }
    Ok(Tagged {
        value: ScoreTable { omega, rows },
        config,
    })
}

// ---- report ----

pub fn format_report(report: &Report, config: Option<&str>) -> String {
    let mut out = format!("# {REPORT_TAG} {VERSION}\n");
    provenance(&mut out, config);
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            fmt_f64(r.auroc),
            fmt_f64(r.tnr_at_tpr95),
            fmt_f64(r.threshold),
            r.omega.map(fmt_f64).unwrap_or_default(),
            r.n_id,
            r.n_ood
        );
    }
    if let Some(v) = &report.variance {
        let _ = writeln!(out, "# var_s_alpha={}", fmt_f64(v.var_s_alpha));
        let _ = writeln!(out, "# var_s_beta={}", fmt_f64(v.var_s_beta));
    }
    out
}

pub fn write_report(path: impl AsRef<Path>, report: &Report, config: Option<&str>) -> Result<()> {
    write_text(path, &format_report(report, config))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Tagged<Report>> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let mut lines = Lines::new(path, &text);
    lines.header(REPORT_TAG)?;
    let config = config_of(&lines.comments());
    match lines.next() {
        Some(h) if h.trim() == REPORT_HEADER => {}
        _ => return Err(lines.err(format!("expected column header '{REPORT_HEADER}'"))),
    }
    let mut report = Report::default();
    let (mut va, mut vb) = (None, None);
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            match rest.split_once('=') {
                Some(("var_s_alpha", v)) => va = Some(lines.parse_f64(v)?),
                Some(("var_s_beta", v)) => vb = Some(lines.parse_f64(v)?),
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(lines.err(format!("expected 7 columns, found {}", f.len())));
        }
        report.rows.push(MethodRow {
            method: f[0].to_string(),
            auroc: lines.parse_f64(f[1])?,
            tnr_at_tpr95: lines.parse_f64(f[2])?,
            threshold: lines.parse_f64(f[3])?,
            omega: if f[4].trim().is_empty() {
                None
            } else {
                Some(lines.parse_f64(f[4])?)
            },
            n_id: lines.parse_usize(f[5])?,
            n_ood: lines.parse_usize(f[6])?,
        });
    }
    report.variance = match (va, vb) {
        (Some(var_s_alpha), Some(var_s_beta)) => Some(VarianceReport {
            var_s_alpha,
            var_s_beta,
        }),
        (None, None) => None,
        _ => return Err(lines.err("report has only one variance line")),
    };
    Ok(Tagged { value: report, config })
}

// ---- loss history ----

pub fn format_history(history: &[f64], config: Option<&str>) -> String {
    let mut out = format!("# {HISTORY_TAG} {VERSION}\n");
    provenance(&mut out, config);
    out.push_str("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{e},{}", fmt_f64(*l));
    }
    out
}

// ---- omega tuning trace ----

pub fn format_tuning(ood_name: &str, tuned: &TunedOmega, config: Option<&str>) -> String {
    let mut out = format!(
        "# {TUNING_TAG} {VERSION} ood={ood_name} omega={}\n",
        fmt_f64(tuned.omega)
    );
    provenance(&mut out, config);
    out.push_str("omega,tnr_at_tpr95\n");
    for (w, t) in &tuned.trace {
        let _ = writeln!(out, "{},{}", fmt_f64(*w), fmt_f64(*t));
    }
    out
}
