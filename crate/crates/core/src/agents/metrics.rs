//! Append-only metrics log with an optional CSV file sink.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const METRICS_COLUMNS: [&str; 7] =
    ["step_or_iter", "wall_ms", "eval_return_mean", "eval_return_std", "sup_err_vs_oracle", "q_err", "loss"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub wall_ms: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    pub sup_err_vs_oracle: Option<f64>,
    pub q_err: Option<f64>,
    pub loss: Option<f64>,
}

impl MetricsRow {
    pub fn at(step: u64) -> Self {
        Self { step, ..Default::default() }
    }

    fn record(&self, with_wall_time: bool) -> [String; 7] {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.step.to_string(),
            if with_wall_time { f(self.wall_ms) } else { String::new() },
            f(self.eval_return_mean),
            f(self.eval_return_std),
            f(self.sup_err_vs_oracle),
            f(self.q_err),
            f(self.loss),
        ]
    }
}

/// Rows kept in memory; with a file sink each push is also written,
/// flushed and synced so a crashed run leaves a readable prefix.
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
    sink: Option<csv::Writer<File>>,
    with_wall_time: bool,
}

impl std::fmt::Debug for MetricsLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsLog").field("rows", &self.rows.len()).field("file", &self.sink.is_some()).finish()
    }
}

impl Default for MetricsLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

fn write_comments<W: Write>(w: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self { rows: Vec::new(), sink: None, with_wall_time: false }
    }

    /// Create `path`, write `# `-prefixed comment lines and the header.
    /// Wall time is left blank unless requested, keeping files reproducible.
    pub fn to_file(path: &Path, comments: &[String], with_wall_time: bool) -> Result<Self> {
        let mut file = File::create(path)?;
        write_comments(&mut file, comments)?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        w.write_record(METRICS_COLUMNS)?;
        w.flush()?;
        Ok(Self { rows: Vec::new(), sink: Some(w), with_wall_time })
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(w) = self.sink.as_mut() {
            w.write_record(row.record(self.with_wall_time))?;
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        write_comments(&mut w, comments)?;
        let mut cw = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        cw.write_record(METRICS_COLUMNS)?;
        for r in &self.rows {
            cw.write_record(r.record(self.with_wall_time))?;
        }
        cw.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = MetricsLog::in_memory();
        log.push(MetricsRow { eval_return_mean: Some(-1.5), loss: Some(0.25), wall_ms: Some(3.0), ..MetricsRow::at(10) })
            .unwrap();
        let mut out = Vec::new();
        log.write_csv(&mut out, &["config_hash=ab".into()]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(
            s,
            "# config_hash=ab\nstep_or_iter,wall_ms,eval_return_mean,eval_return_std,sup_err_vs_oracle,q_err,loss\n10,,-1.5,,,,0.25\n"
        );
    }

    #[test]
    fn file_sink_matches_in_memory_rendering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = MetricsLog::to_file(&path, &["v".into()], false).unwrap();
        log.push(MetricsRow { q_err: Some(1e-3), ..MetricsRow::at(1) }).unwrap();
        log.push(MetricsRow::at(2)).unwrap();
        let mut expect = Vec::new();
        log.write_csv(&mut expect, &["v".into()]).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), expect);
    }
}
