use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,epoch,loss_g,loss_d,l_pd,l_sp,l_gp,r_d,T_live,lm_nll,vocab_usage";

/// One row of the metrics history. Optimisation steps fill the loss columns;
/// controller events fill `r_d`; checkpoint evaluations add the last two
/// columns to their step's row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    pub loss_g: Option<f64>,
    pub loss_d: Option<f64>,
    pub l_pd: Option<f64>,
    pub l_sp: Option<f64>,
    pub l_gp: Option<f64>,
    pub r_d: Option<f64>,
    pub t_live: f64,
    pub lm_nll: Option<f64>,
    pub vocab_usage: Option<f64>,
}

impl MetricRow {
    pub fn is_controller_event(&self) -> bool {
        self.r_d.is_some()
    }

    fn values(&self) -> [Option<f64>; 9] {
        [
            self.loss_g,
            self.loss_d,
            self.l_pd,
            self.l_sp,
            self.l_gp,
            self.r_d,
            Some(self.t_live),
            self.lm_nll,
            self.vocab_usage,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().flatten().all(|v| v.is_finite())
    }
}

/// Append-only history that refuses non-finite values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricHistory {
    rows: Vec<MetricRow>,
}

impl MetricHistory {
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if !row.all_finite() {
            return Err(Error::NonFinite(format!(
                "metrics at step {} (epoch {}): {row:?}",
                row.step, row.epoch
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Adds checkpoint metrics to the most recent step row.
    pub fn annotate_last_step(&mut self, lm_nll: Option<f64>, vocab_usage: f64) -> Result<()> {
        if lm_nll.is_some_and(|v| !v.is_finite()) || !vocab_usage.is_finite() {
            return Err(Error::NonFinite(format!(
                "checkpoint metrics nll={lm_nll:?} usage={vocab_usage}"
            )));
        }
        let row = self
            .rows
            .iter_mut()
            .rev()
            .find(|r| !r.is_controller_event())
            .ok_or_else(|| Error::Contract("no step row to annotate".into()))?;
        row.lm_nll = lm_nll;
        row.vocab_usage = Some(vocab_usage);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn controller_events(&self) -> usize {
        self.rows.iter().filter(|r| r.is_controller_event()).count()
    }

    /// CSV with [`METRICS_HEADER`]; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.step, r.epoch);
            for v in r.values() {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a metrics CSV back into rows.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics CSV header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Format(format!("metrics line {}: {} fields", n + 2, f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("metrics line {}: bad number '{s}'", n + 2)))
            }
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("metrics line {}: bad integer '{s}'", n + 2)))
        };
        rows.push(MetricRow {
            step: int(f[0])?,
            epoch: int(f[1])?,
            loss_g: num(f[2])?,
            loss_d: num(f[3])?,
            l_pd: num(f[4])?,
            l_sp: num(f[5])?,
            l_gp: num(f[6])?,
            r_d: num(f[7])?,
            t_live: num(f[8])?
                .ok_or_else(|| Error::Format(format!("metrics line {}: missing T_live", n + 2)))?,
            lm_nll: num(f[9])?,
            vocab_usage: num(f[10])?,
        });
    }
    Ok(rows)
}
