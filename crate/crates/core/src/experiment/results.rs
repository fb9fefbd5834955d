//! Per-run records, mean/std aggregation and CSV/JSON output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;

use super::Method;

pub const CSV_HEADER: &str = "method,rho,rep,rkl,auc,cvg,ap,lambda,sigma";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub rho: f64,
    pub rep: usize,
    pub report: EvaluationReport,
    pub lambda: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub rho: f64,
    pub runs: usize,
    pub ranking_loss: MetricSummary,
    pub macro_auc: MetricSummary,
    pub coverage: MetricSummary,
    pub average_precision: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    records: Vec<RunRecord>,
}

impl ResultTable {
    pub fn new(records: Vec<RunRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// One aggregate per `(method, ρ)` in first-seen order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(Method, f64)> = Vec::new();
        for r in &self.records {
            if !keys.contains(&(r.method, r.rho)) {
                keys.push((r.method, r.rho));
            }
        }
        keys.into_iter()
            .map(|(method, rho)| {
                let runs: Vec<&EvaluationReport> = self
                    .records
                    .iter()
                    .filter(|r| r.method == method && r.rho == rho)
                    .map(|r| &r.report)
                    .collect();
                let pick = |f: fn(&EvaluationReport) -> f64| {
                    MetricSummary::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                Aggregate {
                    method,
                    rho,
                    runs: runs.len(),
                    ranking_loss: pick(|r| r.ranking_loss),
                    macro_auc: pick(|r| r.macro_auc),
                    coverage: pick(|r| r.coverage),
                    average_precision: pick(|r| r.average_precision),
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: Method, rho: f64) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.rho == rho)
    }

    /// Per-run rows followed by `mean` and `std` rows for every
    /// `(method, ρ)`. Aggregate rows leave `lambda` and `sigma` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.records {
            w.write_record([
                r.method.to_string(),
                r.rho.to_string(),
                r.rep.to_string(),
                r.report.ranking_loss.to_string(),
                r.report.macro_auc.to_string(),
                r.report.coverage.to_string(),
                r.report.average_precision.to_string(),
                r.lambda.to_string(),
                r.sigma.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        for a in self.aggregates() {
            for (tag, get) in [
                ("mean", (|s: MetricSummary| s.mean) as fn(MetricSummary) -> f64),
                ("std", |s: MetricSummary| s.std),
            ] {
                w.write_record([
                    a.method.to_string(),
                    a.rho.to_string(),
                    tag.to_string(),
                    get(a.ranking_loss).to_string(),
                    get(a.macro_auc).to_string(),
                    get(a.coverage).to_string(),
                    get(a.average_precision).to_string(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            records: &'a [RunRecord],
            aggregates: Vec<Aggregate>,
        }
        serde_json::to_writer_pretty(
            out,
            &Doc {
                records: &self.records,
                aggregates: self.aggregates(),
            },
        )?;
        Ok(())
    }

    /// Reads the per-run rows back from CSV. Aggregate rows are skipped;
    /// exclusion counts are not stored in CSV and come back as zero.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Config(format!("unexpected results header `{}`", header.join(","))));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::Config(format!("results row {}: bad {what}", i + 2));
            if matches!(&row[2], "mean" | "std") {
                continue;
            }
            let num = |k: usize, what: &str| row[k].parse::<f64>().map_err(|_| bad(what));
            let report = EvaluationReport {
                ranking_loss: num(3, "rkl")?,
                macro_auc: num(4, "auc")?,
                coverage: num(5, "cvg")?,
                average_precision: num(6, "ap")?,
                ranking_loss_instances: Default::default(),
                auc_labels: Default::default(),
                coverage_instances: Default::default(),
                average_precision_instances: Default::default(),
            };
            records.push(RunRecord {
                method: row[0].parse()?,
                rho: num(1, "rho")?,
                rep: row[2].parse().map_err(|_| bad("rep"))?,
                report,
                lambda: num(7, "lambda")?,
                sigma: if row[8].is_empty() { None } else { Some(num(8, "sigma")?) },
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ResultFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown results format `{other}`"))),
        }
    }
}

impl ResultFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

pub fn emit_results(table: &ResultTable, path: &Path, format: ResultFormat) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ResultFormat::Csv => table.write_csv(file),
        ResultFormat::Json => table.write_json(file),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricCount;

    fn report(auc: f64) -> EvaluationReport {
        let c = MetricCount { used: 3, excluded: 0 };
        EvaluationReport {
            ranking_loss: 1.0 - auc,
            macro_auc: auc,
            coverage: 2.0,
            average_precision: auc,
            ranking_loss_instances: c,
            auc_labels: c,
            coverage_instances: c,
            average_precision_instances: c,
        }
    }

    fn table() -> ResultTable {
        ResultTable::new(vec![
            RunRecord { method: Method::Dm2lLinear, rho: 0.3, rep: 0, report: report(0.8), lambda: 1.0, sigma: None },
            RunRecord { method: Method::Dm2lLinear, rho: 0.3, rep: 1, report: report(0.6), lambda: 10.0, sigma: None },
            RunRecord { method: Method::Dm2lKernel, rho: 0.3, rep: 0, report: report(0.9), lambda: 1.0, sigma: Some(0.5) },
        ])
    }

    #[test]
    fn aggregates_use_sample_std() {
        let a = table().aggregate(Method::Dm2lLinear, 0.3).unwrap();
        assert_eq!(a.runs, 2);
        assert!((a.macro_auc.mean - 0.7).abs() < 1e-15);
        assert!((a.macro_auc.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(table().aggregate(Method::Dm2lKernel, 0.3).unwrap().macro_auc.std, 0.0);
        assert!(table().aggregate(Method::Ridge, 0.3).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        table().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + 3 + 4);
        let back = ResultTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records().len(), 3);
        for (a, b) in back.records().iter().zip(table().records()) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.report.macro_auc, b.report.macro_auc);
        }
    }

    #[test]
    fn json_contains_aggregates() {
        let mut buf = Vec::new();
        table().write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 3);
        assert_eq!(v["aggregates"].as_array().unwrap().len(), 2);
        assert_eq!(v["records"][2]["method"], "dm2l-nl");
    }
}
