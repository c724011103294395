//! CSV outputs: one file per run and one suite summary. Numbers carry 12
//! significant digits, missing values are written as `nan`, lines end in LF.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::record::RunRecord;

pub const RUN_HEADER: &str = "t,epoch,subepoch,cost,comparator_cost,cum_regret,noise_err_sq,logdet_v,policy_switches";

pub const SUMMARY_HEADER: &str =
    "algo,T,seed,final_regret,regret_vs_etc_baseline,epochs,max_subepochs,noise_err_sum,harmonic_sum,wallclock_ms";

/// One data line of a run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub t: usize,
    pub epoch: Option<usize>,
    pub subepoch: Option<usize>,
    pub cost: f64,
    pub comparator_cost: f64,
    pub cum_regret: f64,
    pub noise_err_sq: f64,
    pub logdet_v: f64,
    pub policy_switches: Option<usize>,
}

/// `v` rounded to 12 significant digits, in plain decimal where that is
/// short and in exponent form otherwise.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, sci.parse::<f64>().expect("round trip"));
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{}", trim_zeros(mant), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

/// Rows of a controller run. Without comparator costs the comparator and
/// regret columns hold `nan`.
pub fn run_rows(record: &RunRecord, comparator: Option<&[f64]>) -> Result<Vec<RunRow>> {
    if let Some(c) = comparator {
        if c.len() != record.rows.len() {
            return Err(Error::DimensionMismatch {
                context: "comparator length",
                expected: record.rows.len(),
                found: c.len(),
            });
        }
    }
    let mut acc = 0.0;
    Ok(record
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (comp, cum) = match comparator {
                Some(c) => {
                    acc += r.cost - c[i];
                    (c[i], acc)
                }
                None => (f64::NAN, f64::NAN),
            };
            RunRow {
                t: r.t,
                epoch: Some(r.epoch),
                subepoch: Some(r.subepoch),
                cost: r.cost,
                comparator_cost: comp,
                cum_regret: cum,
                noise_err_sq: r.noise_err * r.noise_err,
                logdet_v: r.logdet_v,
                policy_switches: Some(r.policy_switches),
            }
        })
        .collect())
}

pub fn format_run_csv(rows: &[RunRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(RUN_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            fmt_opt(r.epoch),
            fmt_opt(r.subepoch),
            fmt_sig(r.cost),
            fmt_sig(r.comparator_cost),
            fmt_sig(r.cum_regret),
            fmt_sig(r.noise_err_sq),
            fmt_sig(r.logdet_v),
            fmt_opt(r.policy_switches),
        );
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_run_csv(record: &RunRecord, comparator: Option<&[f64]>, path: &Path) -> Result<()> {
    write_file(path, &format_run_csv(&run_rows(record, comparator)?))
}

fn parse_opt(field: &str) -> std::result::Result<Option<usize>, String> {
    if field == "nan" {
        Ok(None)
    } else {
        field.parse().map(Some).map_err(|e| format!("`{field}`: {e}"))
    }
}

fn parse_f64(field: &str) -> std::result::Result<f64, String> {
    field.parse().map_err(|e| format!("`{field}`: {e}"))
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.split('\n');
    match lines.next() {
        Some(h) if h == RUN_HEADER => {}
        other => return Err(bad(1, format!("unexpected header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(i + 2, format!("expected 9 fields, found {}", f.len())));
        }
        let row = (|| -> std::result::Result<RunRow, String> {
            Ok(RunRow {
                t: f[0].parse().map_err(|e| format!("`{}`: {e}", f[0]))?,
                epoch: parse_opt(f[1])?,
                subepoch: parse_opt(f[2])?,
                cost: parse_f64(f[3])?,
                comparator_cost: parse_f64(f[4])?,
                cum_regret: parse_f64(f[5])?,
                noise_err_sq: parse_f64(f[6])?,
                logdet_v: parse_f64(f[7])?,
                policy_switches: parse_opt(f[8])?,
            })
        })()
        .map_err(|r| bad(i + 2, r))?;
        rows.push(row);
    }
    Ok(rows)
}
