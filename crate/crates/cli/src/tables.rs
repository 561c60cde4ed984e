//! Reading the CSVs written by `train` and `eval` back in.

use std::path::{Path, PathBuf};

use csv::StringRecord;

use crate::error::{CliError, CliResult};

pub const CURVES_HEADER: &str = "algorithm,seed,query_id,calls,recall";

/// One training run's metrics, column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub path: PathBuf,
    pub algorithm: String,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub mean_return: Vec<f64>,
    pub actor_grad_norm: Vec<f64>,
    pub critic_loss: Vec<f64>,
}

/// One point of a recall-vs-calls curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub algorithm: String,
    pub seed: u64,
    pub query_id: usize,
    pub calls: usize,
    pub recall: f64,
}

struct Table {
    path: PathBuf,
    headers: StringRecord,
    records: Vec<StringRecord>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Self> {
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let records = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            records,
        })
    }

    fn column(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::BadTable {
                path: self.path.clone(),
                reason: format!("missing column `{name}`"),
            })
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> CliResult<T> {
        let raw = self.records[row].get(col).unwrap_or("");
        raw.parse().map_err(|_| CliError::BadTable {
            path: self.path.clone(),
            reason: format!(
                "row {}: cannot parse `{raw}` in column `{}`",
                row + 2,
                &self.headers[col]
            ),
        })
    }

    fn text(&self, row: usize, col: usize) -> String {
        self.records[row].get(col).unwrap_or("").to_string()
    }
}

/// Reads a metrics CSV. A header-only file yields `None`.
pub fn read_metrics(path: &Path) -> CliResult<Option<MetricsSeries>> {
    let t = Table::read(path)?;
    let [step, algo, seed, ret, grad, critic] = [
        "step",
        "algorithm",
        "seed",
        "mean_return",
        "actor_grad_norm",
        "critic_loss",
    ]
    .map(|c| t.column(c));
    let (step, algo, seed, ret, grad, critic) = (step?, algo?, seed?, ret?, grad?, critic?);
    if t.records.is_empty() {
        return Ok(None);
    }
    let mut s = MetricsSeries {
        path: path.to_path_buf(),
        algorithm: t.text(0, algo),
        seed: t.parse(0, seed)?,
        steps: Vec::with_capacity(t.records.len()),
        mean_return: Vec::with_capacity(t.records.len()),
        actor_grad_norm: Vec::with_capacity(t.records.len()),
        critic_loss: Vec::with_capacity(t.records.len()),
    };
    for row in 0..t.records.len() {
        if t.text(row, algo) != s.algorithm || t.parse::<u64>(row, seed)? != s.seed {
            return Err(CliError::BadTable {
                path: path.to_path_buf(),
                reason: format!(
                    "row {} mixes runs; expected one algorithm and seed per file",
                    row + 2
                ),
            });
        }
        s.steps.push(t.parse(row, step)?);
        s.mean_return.push(t.parse(row, ret)?);
        s.actor_grad_norm.push(t.parse(row, grad)?);
        s.critic_loss.push(t.parse(row, critic)?);
    }
    Ok(Some(s))
}

pub fn read_curves(path: &Path) -> CliResult<Vec<CurvePoint>> {
    let t = Table::read(path)?;
    let [algo, seed, query, calls, recall] =
        ["algorithm", "seed", "query_id", "calls", "recall"].map(|c| t.column(c));
    let (algo, seed, query, calls, recall) = (algo?, seed?, query?, calls?, recall?);
    (0..t.records.len())
        .map(|row| {
            Ok(CurvePoint {
                algorithm: t.text(row, algo),
                seed: t.parse(row, seed)?,
                query_id: t.parse(row, query)?,
                calls: t.parse(row, calls)?,
                recall: t.parse(row, recall)?,
            })
        })
        .collect()
}

/// Files in `dir` named `<prefix>*.csv`, sorted by name.
pub fn list_csv(dir: &Path, prefix: &str) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| scout_core::Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| scout_core::Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with(prefix) && name.ends_with(".csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_metrics_with_nan_and_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("metrics-gspo-seed1.csv");
        std::fs::write(
            &full,
            "step,algorithm,seed,mean_return,actor_grad_norm,critic_loss,clip_fraction,kl,wall_ms\n\
             0,gspo,1,2.5,0.1,NaN,0,0,0\n1,gspo,1,3,0.2,NaN,0,0,0\n",
        )
        .unwrap();
        let s = read_metrics(&full).unwrap().unwrap();
        assert_eq!(s.algorithm, "gspo");
        assert_eq!(s.steps, vec![0, 1]);
        assert_eq!(s.mean_return, vec![2.5, 3.0]);
        assert!(s.critic_loss.iter().all(|v| v.is_nan()));

        let empty = dir.path().join("metrics-empty.csv");
        std::fs::write(&empty, "step,algorithm,seed,mean_return,actor_grad_norm,critic_loss,clip_fraction,kl,wall_ms\n").unwrap();
        assert!(read_metrics(&empty).unwrap().is_none());
        assert_eq!(list_csv(dir.path(), "metrics-").unwrap().len(), 2);
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "step,algorithm\n0,pspo\n").unwrap();
        let err = read_metrics(&p).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }
}
