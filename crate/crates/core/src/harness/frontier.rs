//! Frontier CSV files, accuracy-frontier pruning, and plot data.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{HarnessError, HyperParams};
use crate::models::ArchKind;

/// Column order of frontier files.
pub const FRONTIER_COLUMNS: [&str; 13] = [
    "signature",
    "arch",
    "q",
    "eta",
    "sigma",
    "clip_c",
    "n_rounds",
    "local_steps",
    "epsilon",
    "delta",
    "mean_accuracy",
    "std_accuracy",
    "n_seeds",
];

/// Epsilon grid for plot data when none is given.
pub const DEFAULT_PLOT_EPSILONS: [f64; 18] = [
    0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 20.0, 50.0, 100.0,
];

/// One experiment: hyperparameters, budget at one delta, and validation
/// accuracy over `n_seeds` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRecord {
    pub signature: String,
    #[serde(serialize_with = "arch_to_text", deserialize_with = "arch_from_text")]
    pub arch: ArchKind,
    pub q: f64,
    pub eta: f64,
    pub sigma: f64,
    pub clip_c: f64,
    pub n_rounds: u32,
    pub local_steps: u32,
    pub epsilon: f64,
    pub delta: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub n_seeds: u32,
}

fn arch_to_text<S: Serializer>(arch: &ArchKind, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(arch)
}

fn arch_from_text<'de, D: Deserializer<'de>>(d: D) -> Result<ArchKind, D::Error> {
    let text = String::deserialize(d)?;
    ArchKind::parse(&text).map_err(serde::de::Error::custom)
}

impl FrontierRecord {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            signature: self.signature.clone(),
            arch: self.arch,
            q: self.q,
            eta: self.eta,
            sigma: self.sigma,
            clip_c: self.clip_c,
            n_rounds: self.n_rounds,
            local_steps: self.local_steps,
        }
    }

    fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.mean_accuracy) {
            return Err(format!("mean_accuracy {} outside [0, 1]", self.mean_accuracy));
        }
        if !(self.epsilon >= 0.0) {
            return Err(format!("epsilon {} is negative", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(format!("delta {} outside (0, 1)", self.delta));
        }
        if !(self.std_accuracy >= 0.0) {
            return Err(format!("std_accuracy {} is negative", self.std_accuracy));
        }
        if self.n_seeds == 0 {
            return Err("n_seeds is 0".into());
        }
        self.hyper_params().validate().map_err(|e| e.to_string())
    }
}

pub fn write_frontier<W: Write>(records: &[FrontierRecord], writer: W) -> Result<(), HarnessError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(FRONTIER_COLUMNS)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_frontier_file(records: &[FrontierRecord], path: &Path) -> Result<(), HarnessError> {
    write_frontier(records, io::BufWriter::new(fs::File::create(path)?))
}

/// Parses a frontier file, checking the header and every row's invariants.
pub fn read_frontier<R: Read>(reader: R) -> Result<Vec<FrontierRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(FRONTIER_COLUMNS) {
        return Err(HarnessError::FrontierParse {
            line: 1,
            message: format!("expected header `{}`", FRONTIER_COLUMNS.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| HarnessError::FrontierParse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let rec: FrontierRecord = row
            .deserialize(Some(&header))
            .map_err(|e| HarnessError::FrontierParse {
                line,
                message: e.to_string(),
            })?;
        rec.check()
            .map_err(|message| HarnessError::FrontierParse { line, message })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn read_frontier_file(path: &Path) -> Result<Vec<FrontierRecord>, HarnessError> {
    read_frontier(fs::File::open(path)?)
}

/// Keeps, for each delta, the records no other record of that delta beats:
/// a record survives if every record with a smaller or equal epsilon has a
/// strictly lower mean accuracy. Equal entries keep the first occurrence.
/// The result is sorted by `(delta, epsilon)`.
pub fn pareto_frontier(records: &[FrontierRecord]) -> Vec<FrontierRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.delta
            .total_cmp(&rb.delta)
            .then(ra.epsilon.total_cmp(&rb.epsilon))
            .then(rb.mean_accuracy.total_cmp(&ra.mean_accuracy))
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut current: Option<(f64, f64)> = None;
    for i in order {
        let r = &records[i];
        let keep = match current {
            Some((delta, best)) if delta == r.delta => r.mean_accuracy > best,
            _ => true,
        };
        if keep {
            current = Some((r.delta, r.mean_accuracy));
            out.push(r.clone());
        }
    }
    out
}

/// Best feasible mean accuracy for one `(delta, epsilon, signature)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub delta: f64,
    pub epsilon: f64,
    pub signature: String,
    /// `None` when no record fits within `(epsilon, delta)`.
    pub best_accuracy: Option<f64>,
}

/// For every delta, signature (in order of first appearance) and epsilon of
/// `epsilons` (ascending), the best mean accuracy among records with
/// `record.delta <= delta` and `record.epsilon <= epsilon`.
pub fn emit_plot_data(records: &[FrontierRecord], deltas: &[f64], epsilons: &[f64]) -> Vec<PlotRow> {
    let mut signatures: Vec<&str> = Vec::new();
    for r in records {
        if !signatures.contains(&r.signature.as_str()) {
            signatures.push(&r.signature);
        }
    }
    let mut eps = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();

    let mut rows = Vec::with_capacity(deltas.len() * signatures.len() * eps.len());
    for &delta in deltas {
        for sig in &signatures {
            for &epsilon in &eps {
                let best_accuracy = records
                    .iter()
                    .filter(|r| r.signature == *sig && r.delta <= delta && r.epsilon <= epsilon)
                    .map(|r| r.mean_accuracy)
                    .max_by(f64::total_cmp);
                rows.push(PlotRow {
                    delta,
                    epsilon,
                    signature: sig.to_string(),
                    best_accuracy,
                });
            }
        }
    }
    rows
}

/// Columns `delta,epsilon,signature,best_accuracy`; infeasible cells are empty.
pub fn write_plot_data<W: Write>(rows: &[PlotRow], writer: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(sig: &str, delta: f64, epsilon: f64, acc: f64) -> FrontierRecord {
        FrontierRecord {
            signature: sig.into(),
            arch: ArchKind::ShallowMlp { hidden_dim: 16 },
            q: 0.05,
            eta: 0.2,
            sigma: 1.5,
            clip_c: 1.0,
            n_rounds: 10,
            local_steps: 20,
            epsilon,
            delta,
            mean_accuracy: acc,
            std_accuracy: 0.01,
            n_seeds: 5,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![rec("rotterdam", 1e-5, 0.8731, 0.93), rec("citbcmst", 1e-3, 1.0 / 3.0, 0.5)];
        let mut buf = Vec::new();
        write_frontier(&rs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&FRONTIER_COLUMNS.join(",")));
        assert!(text.contains("shallow_mlp:16"));
        assert_eq!(read_frontier(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let mut buf = Vec::new();
        write_frontier(&[rec("a", 1e-5, 1.0, 0.9)], &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("a,logistic_regression,0.1,0.1,1,1,1,1,oops,1e-5,0.9,0,1\n");
        match read_frontier(text.as_bytes()) {
            Err(HarnessError::FrontierParse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad_delta = "signature,arch,q,eta,sigma,clip_c,n_rounds,local_steps,epsilon,delta,mean_accuracy,std_accuracy,n_seeds\n\
                         a,logistic_regression,0.1,0.1,1,1,1,1,1,2,0.9,0,1\n";
        assert!(matches!(
            read_frontier(bad_delta.as_bytes()),
            Err(HarnessError::FrontierParse { line: 2, .. })
        ));
        assert!(matches!(
            read_frontier("a,b\n".as_bytes()),
            Err(HarnessError::FrontierParse { line: 1, .. })
        ));
    }

    #[test]
    fn pareto_drops_dominated_rows() {
        let rs = vec![
            rec("a", 1e-5, 1.0, 0.90),
            rec("a", 1e-5, 2.0, 0.85),
            rec("a", 1e-5, 3.0, 0.95),
            rec("a", 1e-5, 0.5, 0.92),
            rec("a", 1e-4, 2.0, 0.10),
        ];
        let f = pareto_frontier(&rs);
        let keys: Vec<(f64, f64)> = f.iter().map(|r| (r.delta, r.epsilon)).collect();
        assert_eq!(keys, vec![(1e-5, 0.5), (1e-5, 3.0), (1e-4, 2.0)]);
    }

    #[test]
    fn plot_data_is_a_step_function() {
        let rs = vec![rec("a", 1e-5, 1.0, 0.9)];
        let rows = emit_plot_data(&rs, &[1e-5], &[2.0, 0.5, 1.0]);
        let got: Vec<(f64, Option<f64>)> = rows.iter().map(|r| (r.epsilon, r.best_accuracy)).collect();
        assert_eq!(got, vec![(0.5, None), (1.0, Some(0.9)), (2.0, Some(0.9))]);
        let mut buf = Vec::new();
        write_plot_data(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("delta,epsilon,signature,best_accuracy\n0.00001,0.5,a,\n"), "{text}");
    }
}
