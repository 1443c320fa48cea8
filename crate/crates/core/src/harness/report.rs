//! Convergence report: per-row CSV, per-eps aggregate JSON and a timing
//! sidecar.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::CompensatedSum;

pub const CSV_HEADER: &str = "epsilon,seed,n_holes,n_good,n_bad,eps_d_Ib,cap_bad_upper,strange_density,l2_err,weak_indicator,iters,residual,wall_ms,status";

/// Aggregated columns, in CSV order.
pub const METRICS: [&str; 9] = [
    "n_holes",
    "n_good",
    "n_bad",
    "eps_d_Ib",
    "cap_bad_upper",
    "strange_density",
    "l2_err",
    "weak_indicator",
    "iters",
];

/// One `(eps, seed)` outcome. Missing values mean the stage that produces
/// them failed; `status` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub epsilon: f64,
    pub seed: u64,
    pub n_holes: Option<usize>,
    pub n_good: Option<usize>,
    pub n_bad: Option<usize>,
    /// `eps^d #(I_b)`.
    #[serde(rename = "eps_d_Ib")]
    pub eps_d_ib: Option<f64>,
    pub cap_bad_upper: Option<f64>,
    pub strange_density: Option<f64>,
    pub l2_err: Option<f64>,
    pub weak_indicator: Option<f64>,
    pub iters: Option<usize>,
    pub residual: Option<f64>,
    /// Wall time of the row. Kept out of the CSV so that reruns are
    /// byte-identical; written to the timing sidecar instead.
    pub wall_ms: Option<f64>,
    pub status: String,
}

impl Row {
    pub fn empty(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            seed,
            n_holes: None,
            n_good: None,
            n_bad: None,
            eps_d_ib: None,
            cap_bad_upper: None,
            strange_density: None,
            l2_err: None,
            weak_indicator: None,
            iters: None,
            residual: None,
            wall_ms: None,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "n_holes" => self.n_holes.map(|v| v as f64),
            "n_good" => self.n_good.map(|v| v as f64),
            "n_bad" => self.n_bad.map(|v| v as f64),
            "eps_d_Ib" => self.eps_d_ib,
            "cap_bad_upper" => self.cap_bad_upper,
            "strange_density" => self.strange_density,
            "l2_err" => self.l2_err,
            "weak_indicator" => self.weak_indicator,
            "iters" => self.iters.map(|v| v as f64),
            "residual" => self.residual,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut s = CompensatedSum::default();
        values.iter().for_each(|&v| s.add(v));
        let mean = s.value() / n as f64;
        let stderr = if n > 1 {
            let mut q = CompensatedSum::default();
            values.iter().for_each(|&v| q.add((v - mean).powi(2)));
            (q.value() / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, stderr, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonAggregate {
    pub epsilon: f64,
    pub n_rows: usize,
    pub n_ok: usize,
    pub metrics: BTreeMap<String, Summary>,
}

impl EpsilonAggregate {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|s| s.mean)
    }
}

/// Per-eps means and standard errors over the rows that carry each metric.
pub fn aggregate(rows: &[Row], epsilons: &[f64]) -> Vec<EpsilonAggregate> {
    epsilons
        .iter()
        .map(|&eps| {
            let sel: Vec<&Row> = rows.iter().filter(|r| r.epsilon == eps).collect();
            let metrics = METRICS
                .iter()
                .filter_map(|&m| {
                    let vals: Vec<f64> = sel.iter().filter_map(|r| r.metric(m)).collect();
                    Summary::of(&vals).map(|s| (m.to_string(), s))
                })
                .collect();
            EpsilonAggregate {
                epsilon: eps,
                n_rows: sel.len(),
                n_ok: sel.iter().filter(|r| r.is_ok()).count(),
                metrics,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Strange term used for `u_h`.
    pub c0: f64,
    pub rows: Vec<Row>,
    pub aggregates: Vec<EpsilonAggregate>,
}

impl ExperimentReport {
    pub fn epsilons(&self) -> Vec<f64> {
        self.aggregates.iter().map(|a| a.epsilon).collect()
    }

    /// Mean of `metric` for each eps, in plan order.
    pub fn means(&self, metric: &str) -> Vec<Option<f64>> {
        self.aggregates.iter().map(|a| a.mean(metric)).collect()
    }

    pub fn csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            w.serialize(CsvRow::from(r)).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    epsilon: f64,
    seed: u64,
    n_holes: Option<usize>,
    n_good: Option<usize>,
    n_bad: Option<usize>,
    #[serde(rename = "eps_d_Ib")]
    eps_d_ib: Option<f64>,
    cap_bad_upper: Option<f64>,
    strange_density: Option<f64>,
    l2_err: Option<f64>,
    weak_indicator: Option<f64>,
    iters: Option<usize>,
    residual: Option<f64>,
    wall_ms: Option<f64>,
    status: String,
}

impl From<&Row> for CsvRow {
    fn from(r: &Row) -> Self {
        Self {
            epsilon: r.epsilon,
            seed: r.seed,
            n_holes: r.n_holes,
            n_good: r.n_good,
            n_bad: r.n_bad,
            eps_d_ib: r.eps_d_ib,
            cap_bad_upper: r.cap_bad_upper,
            strange_density: r.strange_density,
            l2_err: r.l2_err,
            weak_indicator: r.weak_indicator,
            iters: r.iters,
            residual: r.residual,
            wall_ms: None,
            status: r.status.clone(),
        }
    }
}

impl From<CsvRow> for Row {
    fn from(r: CsvRow) -> Self {
        Self {
            epsilon: r.epsilon,
            seed: r.seed,
            n_holes: r.n_holes,
            n_good: r.n_good,
            n_bad: r.n_bad,
            eps_d_ib: r.eps_d_ib,
            cap_bad_upper: r.cap_bad_upper,
            strange_density: r.strange_density,
            l2_err: r.l2_err,
            weak_indicator: r.weak_indicator,
            iters: r.iters,
            residual: r.residual,
            wall_ms: r.wall_ms,
            status: r.status,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AggregateFile {
    c0: f64,
    aggregates: Vec<EpsilonAggregate>,
}

/// Writes `path` through a temporary file in the same directory, so the
/// final path never holds a partial file.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// Writes `report.csv`, `aggregate.json` and `timings.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let csv = report.csv()?;
    write_atomic(&dir.join("report.csv"), |w| Ok(w.write_all(csv.as_bytes())?))?;
    let agg = AggregateFile {
        c0: report.c0,
        aggregates: report.aggregates.clone(),
    };
    let json = serde_json::to_string_pretty(&agg).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&dir.join("aggregate.json"), |w| Ok(writeln!(w, "{json}")?))?;
    write_atomic(&dir.join("timings.csv"), |w| {
        writeln!(w, "epsilon,seed,wall_ms")?;
        for r in &report.rows {
            let ms = r.wall_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
            writeln!(w, "{},{},{ms}", r.epsilon, r.seed)?;
        }
        Ok(())
    })
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Reads a report written by [`write_report`] and checks that the stored
/// aggregates match the rows.
pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(dir.join("report.csv"))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected CSV header".into(),
        });
    }
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.split_once('\n').map_or("", |x| x.1).as_bytes());
    let mut rows: Vec<Row> = Vec::new();
    for rec in rd.deserialize::<CsvRow>() {
        rows.push(rec.map_err(csv_err)?.into());
    }
    let agg: AggregateFile = serde_json::from_str(&std::fs::read_to_string(dir.join("aggregate.json"))?)
        .map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
    let eps: Vec<f64> = agg.aggregates.iter().map(|a| a.epsilon).collect();
    let fresh = aggregate(&rows, &eps);
    for (a, b) in agg.aggregates.iter().zip(&fresh) {
        let same = a.n_rows == b.n_rows
            && a.n_ok == b.n_ok
            && a.metrics.len() == b.metrics.len()
            && a.metrics.iter().all(|(k, s)| {
                b.metrics
                    .get(k)
                    .is_some_and(|t| s.n == t.n && close(s.mean, t.mean) && close(s.stderr, t.stderr))
            });
        if !same {
            return Err(Error::CorruptReport(format!(
                "aggregate for eps = {} does not match the rows",
                a.epsilon
            )));
        }
    }
    if rows.iter().any(|r| !eps.contains(&r.epsilon)) {
        return Err(Error::CorruptReport("row with an eps missing from the aggregate".into()));
    }
    if let Ok(t) = std::fs::read_to_string(dir.join("timings.csv")) {
        for (line, r) in t.lines().skip(1).zip(rows.iter_mut()) {
            r.wall_ms = line.rsplit(',').next().and_then(|v| v.parse().ok());
        }
    }
    Ok(ExperimentReport {
        c0: agg.c0,
        rows,
        aggregates: agg.aggregates,
    })
}
