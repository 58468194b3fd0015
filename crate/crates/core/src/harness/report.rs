use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ppo::{EvalSummary, MetricsRecord};

/// Keys every metrics record carries, in any order.
pub const METRIC_KEYS: [&str; 13] = [
    "global_step",
    "update",
    "episodic_return_mean",
    "discounted_return_mean",
    "success_rate",
    "episodes",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "early_stopped",
    "sps",
];

/// Reads a metrics file, checking every line against the schema: exactly
/// the known keys, and strictly increasing steps.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let expected: BTreeSet<&str> = METRIC_KEYS.into_iter().collect();
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |m: String| Error::Format(format!("{}:{}: {m}", path.display(), i + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| bad("not an object".into()))?;
        let keys: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
        if keys != expected {
            return Err(bad(format!("keys {keys:?} differ from the schema")));
        }
        let rec: MetricsRecord = serde_json::from_value(v).map_err(|e| bad(e.to_string()))?;
        if let Some(prev) = out.last() {
            if rec.global_step <= prev.global_step {
                return Err(bad("global_step does not increase".into()));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Two-sided p-value of the pooled two-proportion z-test.
pub fn two_proportion_p_value(s1: usize, n1: usize, s2: usize, n2: usize) -> Result<f64> {
    if n1 == 0 || n2 == 0 || s1 > n1 || s2 > n2 {
        return Err(Error::InvalidInput("two-proportion test needs 0 <= successes <= trials, trials > 0".into()));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (s1 + s2) as f64 / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    if se == 0.0 {
        return Ok(1.0);
    }
    let z = (s1 as f64 / n1f - s2 as f64 / n2f) / se;
    let normal = Normal::standard();
    Ok(2.0 * (1.0 - normal.cdf(z.abs())))
}

/// Success and return of each agent on each unseen task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub tasks: Vec<String>,
    /// `(agent label, one cell per task)`; `None` when the task was not run.
    pub rows: Vec<(String, Vec<Option<EvalSummary>>)>,
}

fn trim(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

impl GeneralizationReport {
    fn table(&self, cell: impl Fn(&EvalSummary) -> String) -> String {
        let mut grid = vec![std::iter::once("Task".to_string()).chain(self.tasks.iter().cloned()).collect::<Vec<_>>()];
        for (label, cells) in &self.rows {
            let mut row = vec![label.clone()];
            row.extend(cells.iter().map(|c| c.as_ref().map(&cell).unwrap_or_else(|| "-".into())));
            grid.push(row);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in grid.iter().enumerate() {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join(" | "));
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
            }
        }
        out
    }

    /// Final success rate per task.
    pub fn success_table(&self) -> String {
        self.table(|e| trim(e.success_rate))
    }

    /// Discounted return per task as mean±std.
    pub fn return_table(&self) -> String {
        self.table(|e| format!("{:.2}±{:.2}", e.mean_discounted_return, e.std_discounted_return))
    }
}
