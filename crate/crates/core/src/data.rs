//! Expression matrices, gene signatures and preprocessing that does not
//! consume privacy budget.
//!
//! Nothing here computes a statistic across samples. Missing values stay
//! explicit until [`impute_zeros`], feature selection looks only at column
//! names, and only [`stratified_split`] reads labels.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dp_sgd::RngStream;
use crate::models::{Label, LabeledSample};

/// Header name of the label column in matrix files.
pub const LABEL_COLUMN: &str = "label";
/// Cell text that marks a missing value, besides an empty cell.
pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    MalformedHeader { line: u64, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}, column `{column}`: `{value}` is not a number")]
    NonNumeric { line: u64, column: String, value: String },
    #[error("line {line}: unknown label `{value}` (expected 0 or 1)")]
    UnknownLabel { line: u64, value: String },
    #[error("duplicate gene name `{0}`")]
    DuplicateGene(String),
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
    #[error("signature `{0}` is empty")]
    EmptySignature(String),
    #[error("signature `{name}` lists gene `{gene}` twice")]
    DuplicateSignatureGene { name: String, gene: String },
    #[error("no gene of signature `{0}` is present in the matrix")]
    EmptySelection(String),
    #[error("sample {sample}, gene `{gene}` is missing; impute before training")]
    MissingValue { sample: usize, gene: String },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidSplit(Vec<f64>),
    #[error("class {label:?} has {available} samples, fewer than the {parts} requested parts")]
    ClassTooSmall { label: Label, available: usize, parts: usize },
    #[error("invalid generator setting: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Samples by genes, row-major, with explicit missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    values: Vec<Option<f64>>,
    gene_names: Vec<String>,
    labels: Vec<Label>,
}

impl ExpressionMatrix {
    pub fn new(
        values: Vec<Option<f64>>,
        gene_names: Vec<String>,
        labels: Vec<Label>,
    ) -> Result<Self, DataError> {
        if values.len() != gene_names.len() * labels.len() {
            return Err(DataError::Shape(format!(
                "{} values for {} samples x {} genes",
                values.len(),
                labels.len(),
                gene_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for g in &gene_names {
            if !seen.insert(g.as_str()) {
                return Err(DataError::DuplicateGene(g.clone()));
            }
        }
        Ok(Self {
            values,
            gene_names,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_genes(&self) -> usize {
        self.gene_names.len()
    }

    pub fn gene_names(&self) -> &[String] {
        &self.gene_names
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let n = self.n_genes();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, sample: usize, gene: usize) -> Option<f64> {
        self.values[sample * self.n_genes() + gene]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_genes());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            gene_names: self.gene_names.clone(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Training samples; fails if anything is still missing.
    pub fn to_samples(&self) -> Result<Vec<LabeledSample>, DataError> {
        (0..self.n_samples())
            .map(|i| {
                let features = self
                    .row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or_else(|| DataError::MissingValue {
                            sample: i,
                            gene: self.gene_names[j].clone(),
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok(LabeledSample::new(features, self.labels[i]))
            })
            .collect()
    }
}

fn parse_label(s: &str, line: u64) -> Result<Label, DataError> {
    match s {
        "0" => Ok(Label::Normal),
        "1" => Ok(Label::Tumor),
        _ => Err(DataError::UnknownLabel {
            line,
            value: s.to_string(),
        }),
    }
}

/// Parses a matrix from text. Tab-separated when the header line contains
/// a tab, comma-separated otherwise.
pub fn read_matrix<R: Read>(mut reader: R) -> Result<ExpressionMatrix, DataError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let first_line = text.lines().next().unwrap_or("");
    let delimiter = if first_line.contains('\t') { b'\t' } else { b',' };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(delimiter)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(DataError::MalformedHeader {
                line: 1,
                message: "file is empty".into(),
            })
        }
    };
    let label_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| *h == LABEL_COLUMN)
        .map(|(i, _)| i)
        .collect();
    let label_col = match label_cols.as_slice() {
        [c] => *c,
        [] => {
            return Err(DataError::MalformedHeader {
                line: 1,
                message: format!("no `{LABEL_COLUMN}` column"),
            })
        }
        _ => {
            return Err(DataError::MalformedHeader {
                line: 1,
                message: format!("more than one `{LABEL_COLUMN}` column"),
            })
        }
    };
    let mut gene_names = Vec::with_capacity(header.len() - 1);
    for (i, h) in header.iter().enumerate() {
        if i == label_col {
            continue;
        }
        if h.is_empty() {
            return Err(DataError::MalformedHeader {
                line: 1,
                message: format!("column {} has an empty name", i + 1),
            });
        }
        gene_names.push(h.to_string());
    }

    let width = header.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(DataError::RaggedRow {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_col {
                labels.push(parse_label(cell, line)?);
            } else if cell.is_empty() || cell == MISSING_TOKEN {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    line,
                    column: header[i].to_string(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::NonNumeric {
                        line,
                        column: header[i].to_string(),
                        value: cell.to_string(),
                    });
                }
                values.push(Some(v));
            }
        }
    }
    ExpressionMatrix::new(values, gene_names, labels)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<ExpressionMatrix, DataError> {
    read_matrix(fs::File::open(path)?)
}

/// Comma-separated, genes first and `label` last, missing cells as `NA`.
/// Values use the shortest representation that parses back exactly.
pub fn write_matrix<W: Write>(m: &ExpressionMatrix, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = m.gene_names.iter().map(String::as_str).collect();
    header.push(LABEL_COLUMN);
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(m.n_genes() + 1);
    for i in 0..m.n_samples() {
        row.clear();
        row.extend(m.row(i).iter().map(|v| match v {
            Some(x) => x.to_string(),
            None => MISSING_TOKEN.to_string(),
        }));
        row.push((m.labels[i] as u8).to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_matrix(m: &ExpressionMatrix, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_matrix(m, io::BufWriter::new(fs::File::create(path)?))
}

/// A published gene list used for feature selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneSignature {
    name: String,
    genes: Vec<String>,
}

impl GeneSignature {
    pub fn new(name: impl Into<String>, genes: Vec<String>) -> Result<Self, DataError> {
        let name = name.into();
        if genes.is_empty() {
            return Err(DataError::EmptySignature(name));
        }
        let mut seen = HashSet::new();
        for g in &genes {
            if !seen.insert(g.as_str()) {
                return Err(DataError::DuplicateSignatureGene {
                    name,
                    gene: g.clone(),
                });
            }
        }
        Ok(Self { name, genes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    /// One gene per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, DataError> {
        let genes = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Self::new(name, genes)
    }

    /// Reads a signature file; the name is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.name);
        for g in &self.genes {
            out.push_str(g);
            out.push('\n');
        }
        out
    }
}

/// Keeps the signature's genes that the matrix has, in signature order.
/// The number retained is the result's `n_genes()`.
pub fn select_features(
    m: &ExpressionMatrix,
    sig: &GeneSignature,
) -> Result<ExpressionMatrix, DataError> {
    let index: HashMap<&str, usize> = m
        .gene_names
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();
    let cols: Vec<usize> = sig
        .genes
        .iter()
        .filter_map(|g| index.get(g.as_str()).copied())
        .collect();
    if cols.is_empty() {
        return Err(DataError::EmptySelection(sig.name.clone()));
    }
    let mut values = Vec::with_capacity(cols.len() * m.n_samples());
    for i in 0..m.n_samples() {
        let row = m.row(i);
        values.extend(cols.iter().map(|&c| row[c]));
    }
    Ok(ExpressionMatrix {
        values,
        gene_names: cols.iter().map(|&c| m.gene_names[c].clone()).collect(),
        labels: m.labels.clone(),
    })
}

/// Replaces every missing entry by `0.0`.
pub fn impute_zeros(m: &ExpressionMatrix) -> ExpressionMatrix {
    ExpressionMatrix {
        values: m.values.iter().map(|v| Some(v.unwrap_or(0.0))).collect(),
        gene_names: m.gene_names.clone(),
        labels: m.labels.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    fractions: Vec<(String, f64)>,
    seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: Vec<(String, f64)>, seed: u64) -> Result<Self, DataError> {
        let f: Vec<f64> = fractions.iter().map(|(_, f)| *f).collect();
        let sum: f64 = f.iter().sum();
        if f.is_empty() || f.iter().any(|x| !(*x > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(f));
        }
        Ok(Self { fractions, seed })
    }

    /// Client 1 / client 2 / validation, 40/40/20.
    pub fn federated(seed: u64) -> Self {
        Self {
            fractions: vec![
                ("client1".into(), 0.4),
                ("client2".into(), 0.4),
                ("validation".into(), 0.2),
            ],
            seed,
        }
    }

    pub fn fractions(&self) -> &[(String, f64)] {
        &self.fractions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Part sizes summing to `n`: floors of `f * n`, with the leftover units
/// handed to the largest fractional remainders (earlier parts win ties).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Partitions each class independently, so every part keeps the class
/// proportions up to rounding. Rows within a part keep their input order.
pub fn stratified_split(
    m: &ExpressionMatrix,
    spec: &SplitSpec,
) -> Result<Vec<ExpressionMatrix>, DataError> {
    let fractions: Vec<f64> = spec.fractions.iter().map(|(_, f)| *f).collect();
    let parts = fractions.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (class, label) in [Label::Normal, Label::Tumor].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..m.n_samples()).filter(|&i| m.labels[i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < parts {
            return Err(DataError::ClassTooSmall {
                label,
                available: idx.len(),
                parts,
            });
        }
        let mut rng = RngStream::for_split(spec.seed, class as u8).rng();
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (part, size) in largest_remainder(idx.len(), &fractions).into_iter().enumerate() {
            members[part].extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    Ok(members
        .into_iter()
        .map(|mut rows| {
            rows.sort_unstable();
            m.subset(&rows)
        })
        .collect())
}

/// Settings for [`synthesize_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_normal: usize,
    pub n_tumor: usize,
    /// Total number of genes, signal genes included.
    pub n_genes: usize,
    pub effect_size: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

/// Prefix of generated noise-gene names.
pub const NOISE_GENE_PREFIX: &str = "SYN";

/// Class-conditional Gaussian expression data.
///
/// Every gene has unit variance. Signal genes have class means
/// `-s * effect/2` (normal) and `+s * effect/2` (tumor) with `s` alternating
/// `+1, -1` along the signature; all other genes are pure noise. Columns
/// are shuffled so signal genes are not grouped, and each entry is missing
/// independently with probability `missing_rate`.
pub fn synthesize_dataset(
    spec: &SynthSpec,
    signal_genes: &GeneSignature,
) -> Result<ExpressionMatrix, DataError> {
    if spec.n_normal == 0 || spec.n_tumor == 0 {
        return Err(DataError::InvalidGenerator("both classes need at least one sample".into()));
    }
    if spec.n_genes < signal_genes.len() {
        return Err(DataError::InvalidGenerator(format!(
            "{} genes cannot hold a {}-gene signature",
            spec.n_genes,
            signal_genes.len()
        )));
    }
    if !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(DataError::InvalidGenerator(format!(
            "missing rate {} outside [0, 1)",
            spec.missing_rate
        )));
    }
    if !spec.effect_size.is_finite() {
        return Err(DataError::InvalidGenerator("effect size must be finite".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    // (name, signed effect) per column
    let mut columns: Vec<(String, f64)> = signal_genes
        .genes()
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            (g.clone(), sign * spec.effect_size)
        })
        .collect();
    let taken: HashSet<&str> = signal_genes.genes().iter().map(String::as_str).collect();
    let mut k = 0usize;
    while columns.len() < spec.n_genes {
        let name = format!("{NOISE_GENE_PREFIX}{k:05}");
        k += 1;
        if !taken.contains(name.as_str()) {
            columns.push((name, 0.0));
        }
    }
    columns.shuffle(&mut rng);

    let n = spec.n_normal + spec.n_tumor;
    let mut labels: Vec<Label> = std::iter::repeat(Label::Normal)
        .take(spec.n_normal)
        .chain(std::iter::repeat(Label::Tumor).take(spec.n_tumor))
        .collect();
    labels.shuffle(&mut rng);

    let mut values = Vec::with_capacity(n * columns.len());
    for label in &labels {
        let half = match label {
            Label::Normal => -0.5,
            Label::Tumor => 0.5,
        };
        for (_, effect) in &columns {
            let z: f64 = rng.sample(StandardNormal);
            let missing = rng.random::<f64>() < spec.missing_rate;
            values.push((!missing).then_some(z + half * effect));
        }
    }
    ExpressionMatrix::new(values, columns.into_iter().map(|(g, _)| g).collect(), labels)
}
