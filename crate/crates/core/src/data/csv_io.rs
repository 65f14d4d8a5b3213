//! CSV ingestion and export.
//!
//! Schema A is the counting-process layout: one `(tstart, tstop]` row per
//! recurrence plus a closing row carrying the death flag. Schema B is a wide
//! one-row-per-subject layout with `;`-separated recurrence times.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use super::{format_value, DataError, Dataset, RawSubject};

/// Column names used by the loaders; every field can be remapped.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub id: String,
    pub tstart: String,
    pub tstop: String,
    pub event: String,
    pub death: String,
    pub trt: String,
    /// Optional: used as stratum label when the column is present.
    pub stratum: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            tstart: "tstart".into(),
            tstop: "tstop".into(),
            event: "event".into(),
            death: "death".into(),
            trt: "trt".into(),
            stratum: "stratum".into(),
        }
    }
}

const WIDE_CENSOR: &str = "censor_time";
const WIDE_DEATH: &str = "death_time";
const WIDE_TIMES: &str = "recurrent_times";

struct Row {
    start: f64,
    stop: f64,
    event: bool,
    death: bool,
}

struct Pending {
    treated: bool,
    covariates: BTreeMap<String, f64>,
    stratum: Option<String>,
    rows: Vec<Row>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64, DataError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| DataError::Parse {
        line,
        column: name.to_string(),
        value: raw.to_string(),
    })
}

fn parse_flag(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<bool, DataError> {
    Ok(parse_f64(rec, idx, name, line)? != 0.0)
}

/// Indices of columns that are not claimed by the schema: covariates.
fn covariate_columns(headers: &csv::StringRecord, claimed: &[usize]) -> Vec<(usize, String)> {
    headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !claimed.contains(i))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect()
}

fn read_covariates(
    rec: &csv::StringRecord,
    cols: &[(usize, String)],
    line: usize,
) -> Result<BTreeMap<String, f64>, DataError> {
    cols.iter().map(|(i, name)| Ok((name.clone(), parse_f64(rec, *i, name, line)?))).collect()
}

/// Load a counting-process (schema A) file.
pub fn load_counting_process<R: Read>(input: R, map: &ColumnMap) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let id_c = column(&headers, &map.id)?;
    let start_c = column(&headers, &map.tstart)?;
    let stop_c = column(&headers, &map.tstop)?;
    let event_c = column(&headers, &map.event)?;
    let death_c = column(&headers, &map.death)?;
    let trt_c = column(&headers, &map.trt)?;
    let stratum_c = column(&headers, &map.stratum).ok();
    let mut claimed = vec![id_c, start_c, stop_c, event_c, death_c, trt_c];
    claimed.extend(stratum_c);
    let cov_cols = covariate_columns(&headers, &claimed);

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id = rec.get(id_c).unwrap_or("").trim().to_string();
        let row = Row {
            start: parse_f64(&rec, start_c, &map.tstart, line)?,
            stop: parse_f64(&rec, stop_c, &map.tstop, line)?,
            event: parse_flag(&rec, event_c, &map.event, line)?,
            death: parse_flag(&rec, death_c, &map.death, line)?,
        };
        match pending.get_mut(&id) {
            Some(p) => p.rows.push(row),
            None => {
                // baseline values come from the subject's first row
                let p = Pending {
                    treated: parse_flag(&rec, trt_c, &map.trt, line)?,
                    covariates: read_covariates(&rec, &cov_cols, line)?,
                    stratum: stratum_c.map(|c| rec.get(c).unwrap_or("").trim().to_string()),
                    rows: vec![row],
                };
                order.push(id.clone());
                pending.insert(id, p);
            }
        }
    }

    let mut raws = Vec::with_capacity(order.len());
    for id in order {
        let mut p = pending.remove(&id).expect("grouped id");
        p.rows.sort_by(|a, b| a.start.total_cmp(&b.start));
        raws.push(assemble(id, p)?);
    }
    Dataset::from_raw(raws)
}

fn assemble(id: String, p: Pending) -> Result<RawSubject, DataError> {
    let mut expected_start = 0.0;
    let mut times = Vec::new();
    let last = p.rows.len() - 1;
    for (k, row) in p.rows.iter().enumerate() {
        if row.start != expected_start {
            return Err(DataError::GapOrOverlapInIntervals { id, at: row.start });
        }
        if !(row.stop > row.start) {
            return Err(DataError::EmptyInterval { id, start: row.start, stop: row.stop });
        }
        if row.death && k != last {
            return Err(DataError::MultipleDeathRows { id });
        }
        if row.event {
            times.push(row.stop);
        }
        expected_start = row.stop;
    }
    let follow_up = p.rows[last].stop;
    let death_time = p.rows[last].death.then_some(follow_up);
    Ok(RawSubject {
        id,
        treated: p.treated,
        recurrent_times: times,
        death_time,
        censor_time: follow_up,
        covariates: p.covariates,
        stratum: p.stratum,
    })
}

fn covariate_header(ds: &Dataset) -> Vec<String> {
    ds.covariate_names()
}

fn has_strata(ds: &Dataset) -> bool {
    ds.subjects().iter().any(|s| s.stratum().is_some())
}

/// Write `ds` in counting-process layout (schema A).
///
/// The censoring time of a subject who died is not representable; loading the
/// output reproduces `ds.observed()`.
pub fn export_counting_process<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let covs = covariate_header(ds);
    let strata = has_strata(ds);
    let mut header: Vec<String> =
        ["id", "tstart", "tstop", "event", "death", "trt"].iter().map(|s| s.to_string()).collect();
    header.extend(covs.iter().cloned());
    if strata {
        header.push("stratum".into());
    }
    w.write_record(&header)?;

    for s in ds.subjects() {
        let mut tail: Vec<String> =
            covs.iter().map(|c| s.covariate(c).map(|v| format!("{v}")).unwrap_or_default()).collect();
        if strata {
            tail.push(s.stratum().unwrap_or("").to_string());
        }
        let trt = format_value(s.arm().indicator());
        let death_flag = if s.died() { "1" } else { "0" };
        let mut start = 0.0_f64;
        let times = s.recurrent_times();
        for (j, &t) in times.iter().enumerate() {
            // a recurrence at the end of follow-up closes the history itself
            let closing = j + 1 == times.len() && t == s.follow_up();
            let mut rec = vec![
                s.id().to_string(),
                format!("{start}"),
                format!("{t}"),
                "1".to_string(),
                if closing { death_flag } else { "0" }.to_string(),
                trt.clone(),
            ];
            rec.extend(tail.iter().cloned());
            w.write_record(&rec)?;
            start = t;
        }
        if start < s.follow_up() {
            let mut rec = vec![
                s.id().to_string(),
                format!("{start}"),
                format!("{}", s.follow_up()),
                "0".to_string(),
                death_flag.to_string(),
                trt.clone(),
            ];
            rec.extend(tail.iter().cloned());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(())
}

/// Load the wide layout (schema B): `id, trt, censor_time, death_time, recurrent_times`.
pub fn load_wide<R: Read>(input: R, map: &ColumnMap) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let id_c = column(&headers, &map.id)?;
    let trt_c = column(&headers, &map.trt)?;
    let censor_c = column(&headers, WIDE_CENSOR)?;
    let death_c = column(&headers, WIDE_DEATH)?;
    let times_c = column(&headers, WIDE_TIMES)?;
    let stratum_c = column(&headers, &map.stratum).ok();
    let mut claimed = vec![id_c, trt_c, censor_c, death_c, times_c];
    claimed.extend(stratum_c);
    let cov_cols = covariate_columns(&headers, &claimed);

    let mut raws = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let death_raw = rec.get(death_c).unwrap_or("").trim();
        let death_time = if death_raw.is_empty() {
            None
        } else {
            Some(parse_f64(&rec, death_c, WIDE_DEATH, line)?)
        };
        let times_raw = rec.get(times_c).unwrap_or("").trim();
        let recurrent_times = if times_raw.is_empty() {
            Vec::new()
        } else {
            times_raw
                .split(';')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| DataError::Parse {
                        line,
                        column: WIDE_TIMES.to_string(),
                        value: t.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        raws.push(RawSubject {
            id: rec.get(id_c).unwrap_or("").trim().to_string(),
            treated: parse_flag(&rec, trt_c, &map.trt, line)?,
            recurrent_times,
            death_time,
            censor_time: parse_f64(&rec, censor_c, WIDE_CENSOR, line)?,
            covariates: read_covariates(&rec, &cov_cols, line)?,
            stratum: stratum_c.map(|c| rec.get(c).unwrap_or("").trim().to_string()),
        });
    }
    Dataset::from_raw(raws)
}

/// Write `ds` in the wide layout (schema B). Lossless.
pub fn export_wide<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let covs = covariate_header(ds);
    let strata = has_strata(ds);
    let mut header: Vec<String> = ["id", "trt", WIDE_CENSOR, WIDE_DEATH, WIDE_TIMES]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(covs.iter().cloned());
    if strata {
        header.push("stratum".into());
    }
    w.write_record(&header)?;
    for s in ds.subjects() {
        let times: Vec<String> = s.recurrent_times().iter().map(|t| format!("{t}")).collect();
        let mut rec = vec![
            s.id().to_string(),
            format_value(s.arm().indicator()),
            format!("{}", s.censor_time()),
            s.death_time().map(|d| format!("{d}")).unwrap_or_default(),
            times.join(";"),
        ];
        rec.extend(covs.iter().map(|c| s.covariate(c).map(|v| format!("{v}")).unwrap_or_default()));
        if strata {
            rec.push(s.stratum().unwrap_or("").to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(())
}
