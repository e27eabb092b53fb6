//! Labelled fingerprint traces: the CSV exchanged between simulation runs and
//! offline cluster training.
//!
//! Columns: `run, device, epoch`, one `bin_<lo>_<hi>` column per histogram
//! bin, then one `mu_<gamma>` column per action.

use std::path::Path;

use crate::bandit::ActionSet;
use crate::clustering::LabeledState;
use crate::error::{Error, Result};
use crate::fingerprint::{BinEdges, SensingFingerprint};
use crate::sim::metrics::MetricsReport;

/// Parsed trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub bin_edges: BinEdges,
    pub actions: ActionSet,
    pub states: Vec<LabeledState>,
}

pub fn trace_header(edges: &[f64], gammas: &[f64]) -> Vec<String> {
    let mut h = vec!["run".to_string(), "device".into(), "epoch".into()];
    h.extend(edges.windows(2).map(|w| format!("bin_{}_{}", w[0], w[1])));
    h.extend(gammas.iter().map(|g| format!("mu_{g}")));
    h
}

/// Writes the traces of several runs into one file. `runs` pairs a run id
/// with its report; all reports must share bins and actions.
pub fn write_traces(path: &Path, runs: &[(u64, &MetricsReport)]) -> Result<()> {
    let first = runs
        .first()
        .ok_or_else(|| Error::config("no runs to write traces for"))?
        .1;
    let header = trace_header(&first.bin_edges, &first.gamma_labels);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    w.write_record(&header)?;
    for (run, rep) in runs {
        if rep.bin_edges != first.bin_edges || rep.gamma_labels != first.gamma_labels {
            return Err(Error::config("runs disagree on bin edges or action set"));
        }
        for t in &rep.traces {
            if t.utility.is_empty() {
                continue;
            }
            let mut rec = vec![run.to_string(), t.device.to_string(), t.epoch.to_string()];
            rec.extend(t.bins.iter().map(|v| v.to_string()));
            rec.extend(t.utility.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_num(s: &str, col: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::config(format!("trace column '{col}': cannot parse '{s}' as a number")))
}

pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[..3] != ["run", "device", "epoch"] {
        return Err(Error::config("trace header must start with run,device,epoch"));
    }
    let mut edges: Vec<f64> = Vec::new();
    let mut gammas = Vec::new();
    for &c in &cols[3..] {
        if let Some(rest) = c.strip_prefix("bin_") {
            let (lo, hi) = split_edge_pair(rest)
                .ok_or_else(|| Error::config(format!("malformed bin column '{c}'")))?;
            let lo = parse_num(lo, c)?;
            let hi = parse_num(hi, c)?;
            match edges.last() {
                None => edges.extend([lo, hi]),
                Some(&prev) if prev == lo => edges.push(hi),
                Some(_) => return Err(Error::config(format!("bin column '{c}' is not contiguous"))),
            }
            if !gammas.is_empty() {
                return Err(Error::config("bin columns must precede mu columns"));
            }
        } else if let Some(g) = c.strip_prefix("mu_") {
            gammas.push(parse_num(g, c)?);
        } else {
            return Err(Error::config(format!("unexpected trace column '{c}'")));
        }
    }
    let bin_edges = BinEdges::new(edges)?;
    let actions = ActionSet::new(gammas)?;
    let nb = bin_edges.bin_count();
    let mut states = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .zip(&cols)
            .skip(3)
            .map(|(v, c)| parse_num(v, c))
            .collect::<Result<_>>()?;
        let bins = vals[..nb].to_vec();
        let epoch: u64 = rec[2]
            .parse()
            .map_err(|_| Error::config(format!("trace row {}: bad epoch", line + 2)))?;
        let state = SensingFingerprint::from_probabilities(bins, 0, epoch)
            .map_err(|e| Error::config(format!("trace row {}: {e}", line + 2)))?;
        states.push(LabeledState {
            state,
            utility: vals[nb..].to_vec(),
        });
    }
    Ok(TraceSet {
        bin_edges,
        actions,
        states,
    })
}

/// Splits `"<lo>_<hi>"`, where both may carry a sign.
fn split_edge_pair(s: &str) -> Option<(&str, &str)> {
    let i = s.find('_')?;
    Some((&s[..i], &s[i + 1..]))
}
