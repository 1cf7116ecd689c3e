//! FlowTrace CSV + JSON sidecar.
//!
//! CSV columns: `rx_time,tx_time,size,seq_end,ack_sent[,rlc_buffer,pdcp_delay]`,
//! times in seconds with nine decimals. The sidecar `<stem>.json` holds the
//! label, scenario and run statistics. External captures can be ingested by
//! writing the same CSV and a sidecar with at least `label` and `duration`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CcAlgorithm, FlowStats, FlowTrace, PacketRecord, Scenario};
use crate::error::{Error, Result};

const WIRED_HEADER: [&str; 5] = ["rx_time", "tx_time", "size", "seq_end", "ack_sent"];
const WIRELESS_EXTRA: [&str; 2] = ["rlc_buffer", "pdcp_delay"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub label: CcAlgorithm,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    pub duration: f64,
    #[serde(default)]
    pub stats: FlowStats,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_trace_csv<W: Write>(out: W, records: &[PacketRecord]) -> Result<()> {
    let wireless = records.first().is_some_and(|r| r.rlc_buffer.is_some());
    let mut w = csv::Writer::from_writer(out);
    if wireless {
        w.write_record(WIRED_HEADER.iter().chain(WIRELESS_EXTRA.iter()))
            .map_err(csv_err)?;
    } else {
        w.write_record(WIRED_HEADER).map_err(csv_err)?;
    }
    for r in records {
        let mut row = vec![
            format!("{:.9}", r.rx_time),
            format!("{:.9}", r.tx_time),
            r.size.to_string(),
            r.seq_end.to_string(),
            r.ack_sent.to_string(),
        ];
        if wireless {
            row.push(r.rlc_buffer.map(|b| b.to_string()).unwrap_or_default());
            row.push(r.pdcp_delay.map(|d| format!("{d:.9}")).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("<csv>", format!("{other:?}")),
    }
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`; returns the CSV path.
pub fn write_trace(dir: &Path, stem: &str, trace: &FlowTrace) -> Result<PathBuf> {
    let csv_path = dir.join(format!("{stem}.csv"));
    write_trace_csv(BufWriter::new(File::create(&csv_path)?), &trace.records)?;
    let sidecar = TraceSidecar {
        label: trace.label,
        scenario: Some(trace.scenario.clone()),
        duration: trace.duration,
        stats: trace.stats.clone(),
    };
    let mut f = BufWriter::new(File::create(sidecar_path(&csv_path))?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(csv_path)
}

/// Reads the records of a trace CSV; side-channel columns are optional.
pub fn read_trace_csv(path: &Path) -> Result<Vec<PacketRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(WIRED_HEADER) {
        *slot = col(name).ok_or_else(|| Error::format(path, format!("missing column `{name}`")))?;
    }
    let rlc_col = col("rlc_buffer");
    let pdcp_col = col("pdcp_delay");

    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(what));
        let int = |i: usize, what: &str| field(i).parse::<u64>().map_err(|_| bad(what));
        let opt = |c: Option<usize>| c.map(field).filter(|s| !s.is_empty());
        records.push(PacketRecord {
            rx_time: num(idx[0], "rx_time")?,
            tx_time: num(idx[1], "tx_time")?,
            size: int(idx[2], "size")? as u32,
            seq_end: int(idx[3], "seq_end")?,
            ack_sent: int(idx[4], "ack_sent")?,
            rlc_buffer: opt(rlc_col)
                .map(|s| s.parse::<u32>().map_err(|_| bad("rlc_buffer")))
                .transpose()?,
            pdcp_delay: opt(pdcp_col)
                .map(|s| s.parse::<f64>().map_err(|_| bad("pdcp_delay")))
                .transpose()?,
        });
    }
    Ok(records)
}

/// Reads a trace CSV and its JSON sidecar.
pub fn read_trace(csv_path: &Path) -> Result<FlowTrace> {
    let records = read_trace_csv(csv_path)?;
    let side_path = sidecar_path(csv_path);
    let sidecar: TraceSidecar = serde_json::from_reader(File::open(&side_path)?)
        .map_err(|e| Error::format(&side_path, e.to_string()))?;
    let scenario = sidecar.scenario.unwrap_or_else(|| Scenario {
        link: super::LinkConfig::wired(1.0, 1.0, 1),
        seed: None,
    });
    let trace = FlowTrace {
        records,
        label: sidecar.label,
        scenario,
        duration: sidecar.duration,
        stats: sidecar.stats,
    };
    trace.validate()?;
    Ok(trace)
}
