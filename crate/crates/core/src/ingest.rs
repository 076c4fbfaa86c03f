//! Packet trace parsing and interval binning.
//!
//! A trace is a header-less CSV with one packet per line:
//!
//! ```text
//! timestamp_s,direction,length_bytes,protocol
//! 0.0,UL,100,TCP
//! 0.5,DL,1400,UDP
//! ```
//!
//! `direction` is `UL` or `DL`; `protocol` is one of `TCP`, `UDP`, `QUIC`,
//! `OTHER`. Timestamps are decimal seconds since the start of the trace.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default interval length in seconds.
pub const DEFAULT_TAU: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "UL")]
    Ul,
    #[serde(rename = "DL")]
    Dl,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ul => "UL",
            Direction::Dl => "DL",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UL" => Ok(Direction::Ul),
            "DL" => Ok(Direction::Dl),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// Closed protocol vocabulary. The discriminant doubles as the index into
/// [`IntervalFeatures::protocol_counts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "TCP")]
    Tcp = 0,
    #[serde(rename = "UDP")]
    Udp = 1,
    #[serde(rename = "QUIC")]
    Quic = 2,
    #[serde(rename = "OTHER")]
    Other = 3,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Tcp, Protocol::Udp, Protocol::Quic, Protocol::Other];
    pub const COUNT: usize = Self::ALL.len();

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Quic => "QUIC",
            Protocol::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "QUIC" => Ok(Protocol::Quic),
            "OTHER" => Ok(Protocol::Other),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// One captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Seconds since trace start, non-negative.
    pub timestamp: f64,
    pub direction: Direction,
    /// Bytes, at least 1.
    pub length: u32,
    pub protocol: Protocol,
}

/// Aggregated statistics of one interval `[index·τ, (index+1)·τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalFeatures {
    pub index: usize,
    pub ul_count: u64,
    pub dl_count: u64,
    pub ul_bytes: u64,
    pub dl_bytes: u64,
    /// `ul_count / max(dl_count, 1)`.
    pub ul_dl_ratio: f64,
    /// Packet counts indexed by [`Protocol::index`].
    pub protocol_counts: [u64; Protocol::COUNT],
}

impl IntervalFeatures {
    pub fn empty(index: usize) -> Self {
        IntervalFeatures {
            index,
            ul_count: 0,
            dl_count: 0,
            ul_bytes: 0,
            dl_bytes: 0,
            ul_dl_ratio: 0.0,
            protocol_counts: [0; Protocol::COUNT],
        }
    }

    pub fn total_count(&self) -> u64 {
        self.ul_count + self.dl_count
    }

    pub fn protocol_count(&self, protocol: Protocol) -> u64 {
        self.protocol_counts[protocol.index()]
    }

    fn add(&mut self, record: &PacketRecord) {
        let len = u64::from(record.length);
        match record.direction {
            Direction::Ul => {
                self.ul_count += 1;
                self.ul_bytes += len;
            }
            Direction::Dl => {
                self.dl_count += 1;
                self.dl_bytes += len;
            }
        }
        self.protocol_counts[record.protocol.index()] += 1;
    }

    fn finish(&mut self) {
        self.ul_dl_ratio = self.ul_count as f64 / self.dl_count.max(1) as f64;
    }
}

/// Which per-interval quantity is treated as the traffic intensity to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    UlCount,
    TotalCount,
}

impl Target {
    pub fn extract(self, intervals: &[IntervalFeatures]) -> Vec<f64> {
        intervals
            .iter()
            .map(|iv| match self {
                Target::UlCount => iv.ul_count as f64,
                Target::TotalCount => iv.total_count() as f64,
            })
            .collect()
    }
}

fn parse_line(line: &str) -> Result<PacketRecord, String> {
    let mut fields = line.split(',');
    let mut next = |name: &str| {
        fields
            .next()
            .map(str::trim)
            .ok_or_else(|| format!("missing field {name}"))
    };
    let ts_raw = next("timestamp_s")?;
    let dir_raw = next("direction")?;
    let len_raw = next("length_bytes")?;
    let proto_raw = next("protocol")?;
    if fields.next().is_some() {
        return Err("expected 4 fields".to_string());
    }

    let timestamp: f64 = ts_raw
        .parse()
        .map_err(|_| format!("bad timestamp {ts_raw:?}"))?;
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(format!("timestamp must be finite and non-negative, got {ts_raw}"));
    }
    let direction = dir_raw.parse()?;
    let length: u32 = len_raw
        .parse()
        .map_err(|_| format!("bad packet length {len_raw:?}"))?;
    if length == 0 {
        return Err("packet length must be at least 1".to_string());
    }
    let protocol = proto_raw.parse()?;
    Ok(PacketRecord {
        timestamp,
        direction,
        length,
        protocol,
    })
}

/// Parses a trace-CSV stream. Blank lines are skipped; the result is stably
/// sorted by timestamp.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<PacketRecord>, IngestError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let record = parse_line(trimmed).map_err(|reason| IngestError::Parse { line: i + 1, reason })?;
        records.push(record);
    }
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(records)
}

pub fn parse_trace_str(source: &str) -> Result<Vec<PacketRecord>, IngestError> {
    parse_trace(source.as_bytes())
}

/// Writes records in trace-CSV form. Timestamps use the shortest decimal
/// representation that parses back to the same `f64`, so
/// `parse_trace(write_trace(x)) == x` for sorted input.
pub fn write_trace<W: Write>(records: &[PacketRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{},{},{},{}", r.timestamp, r.direction, r.length, r.protocol)?;
    }
    Ok(())
}

pub fn trace_to_string(records: &[PacketRecord]) -> String {
    let mut buf = Vec::with_capacity(records.len() * 24);
    write_trace(records, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace output is ASCII")
}

/// Interval ordinal containing `t`. Boundary timestamps go to the later
/// interval even when `t / tau` rounds just below an integer.
pub fn interval_index(t: f64, tau: f64) -> usize {
    let mut k = (t / tau).floor();
    if (k + 1.0) * tau <= t {
        k += 1.0;
    } else if k > 0.0 && k * tau > t {
        k -= 1.0;
    }
    k as usize
}

/// Number of intervals of length `tau` needed to cover `[0, horizon)`.
pub fn interval_count(tau: f64, horizon: f64) -> usize {
    let n = (horizon / tau).ceil();
    // guard against 30.000000000000004 / 10 style overshoot
    if n >= 1.0 && (n - 1.0) * tau >= horizon {
        (n - 1.0) as usize
    } else {
        n as usize
    }
}

/// Bins sorted records into `ceil(horizon / tau)` consecutive intervals.
/// Records at or beyond `horizon` are dropped; empty intervals are kept with
/// all-zero features.
pub fn bin_intervals(
    records: &[PacketRecord],
    tau: f64,
    horizon: f64,
) -> Result<Vec<IntervalFeatures>, IngestError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(IngestError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(IngestError::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = interval_count(tau, horizon);
    let mut out: Vec<IntervalFeatures> = (0..n).map(IntervalFeatures::empty).collect();
    for r in records {
        if r.timestamp >= horizon {
            continue;
        }
        let k = interval_index(r.timestamp, tau);
        if k < n {
            out[k].add(r);
        }
    }
    for iv in &mut out {
        iv.finish();
    }
    Ok(out)
}

/// Merges every `k` consecutive intervals into one (the trailing partial
/// group is kept). Counts and bytes add; the ratio is recomputed.
pub fn aggregate_intervals(
    intervals: &[IntervalFeatures],
    k: usize,
) -> Result<Vec<IntervalFeatures>, IngestError> {
    if k == 0 {
        return Err(IngestError::InvalidArgument("aggregation factor must be ≥ 1".into()));
    }
    Ok(intervals
        .chunks(k)
        .enumerate()
        .map(|(i, group)| {
            let mut acc = IntervalFeatures::empty(i);
            for iv in group {
                acc.ul_count += iv.ul_count;
                acc.dl_count += iv.dl_count;
                acc.ul_bytes += iv.ul_bytes;
                acc.dl_bytes += iv.dl_bytes;
                for (a, b) in acc.protocol_counts.iter_mut().zip(iv.protocol_counts) {
                    *a += b;
                }
            }
            acc.finish();
            acc
        })
        .collect())
}

/// End of the last record, used as the default binning horizon.
pub fn trace_horizon(records: &[PacketRecord], tau: f64) -> f64 {
    match records.last() {
        // cover the final record: the horizon is the end of its interval
        Some(last) => (interval_index(last.timestamp, tau) + 1) as f64 * tau,
        None => tau,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ul(t: f64) -> PacketRecord {
        PacketRecord {
            timestamp: t,
            direction: Direction::Ul,
            length: 100,
            protocol: Protocol::Tcp,
        }
    }

    #[test]
    fn parses_fields() {
        let recs = parse_trace_str("0.0,UL,100,TCP\n0.5,DL,1400,UDP").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], ul(0.0));
        assert_eq!(recs[1].direction, Direction::Dl);
        assert_eq!(recs[1].length, 1400);
        assert_eq!(recs[1].protocol, Protocol::Udp);
    }

    #[test]
    fn sorts_by_timestamp() {
        let recs = parse_trace_str("2.0,UL,10,TCP\n1.0,UL,20,TCP\n").unwrap();
        let ts: Vec<f64> = recs.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.0]);
    }

    #[test]
    fn sort_is_stable() {
        let recs = parse_trace_str("1.0,UL,10,TCP\n0.5,DL,1,UDP\n1.0,UL,20,TCP\n").unwrap();
        assert_eq!(recs[1].length, 10);
        assert_eq!(recs[2].length, 20);
    }

    #[test]
    fn empty_source_is_empty_list() {
        assert!(parse_trace_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_trace_str("0.0,UL,100,TCP\n0.1,UL,abc,TCP\n").unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_trace_str("0.0,UP,100,TCP").unwrap_err(),
            IngestError::Parse { line: 1, .. }
        ));
        assert!(matches!(
            parse_trace_str("0.0,UL,100,SCTP").unwrap_err(),
            IngestError::Parse { line: 1, .. }
        ));
        assert!(parse_trace_str("0.0,UL,100").is_err());
        assert!(parse_trace_str("0.0,UL,100,TCP,x").is_err());
        assert!(parse_trace_str("-1.0,UL,100,TCP").is_err());
        assert!(parse_trace_str("0.0,UL,0,TCP").is_err());
    }

    #[test]
    fn binning_boundaries() {
        let recs = vec![ul(1.0), ul(5.0), ul(12.0)];
        let iv = bin_intervals(&recs, 10.0, 20.0).unwrap();
        assert_eq!(iv.len(), 2);
        assert_eq!(iv[0].ul_count, 2);
        assert_eq!(iv[1].ul_count, 1);
    }

    #[test]
    fn boundary_packet_goes_to_later_interval() {
        let iv = bin_intervals(&[ul(10.0)], 10.0, 20.0).unwrap();
        assert_eq!((iv[0].ul_count, iv[1].ul_count), (0, 1));
        // k·τ as computed in floating point always lands in interval k
        for k in 0..1000 {
            assert_eq!(interval_index(k as f64 * 0.1, 0.1), k);
            assert_eq!(interval_index(k as f64 * 0.7, 0.7), k);
        }
        assert_eq!(interval_index(0.29999, 0.1), 2);
    }

    #[test]
    fn empty_intervals_are_zero() {
        let iv = bin_intervals(&[], 10.0, 30.0).unwrap();
        assert_eq!(iv.len(), 3);
        assert!(iv.iter().enumerate().all(|(i, x)| *x == IntervalFeatures::empty(i)));
    }

    #[test]
    fn records_past_horizon_are_dropped() {
        let iv = bin_intervals(&[ul(1.0), ul(25.0)], 10.0, 20.0).unwrap();
        assert_eq!(iv.iter().map(|x| x.ul_count).sum::<u64>(), 1);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(bin_intervals(&[], 0.0, 10.0).is_err());
        assert!(bin_intervals(&[], -1.0, 10.0).is_err());
    }

    #[test]
    fn ratio_uses_floored_denominator() {
        let recs = vec![ul(0.1), ul(0.2), ul(0.3)];
        let iv = bin_intervals(&recs, 1.0, 1.0).unwrap();
        assert_eq!(iv[0].ul_dl_ratio, 3.0);
        assert_eq!(iv[0].protocol_count(Protocol::Tcp), 3);
    }

    #[test]
    fn trace_horizon_covers_last_record() {
        assert_eq!(trace_horizon(&[ul(0.0), ul(25.0)], 10.0), 30.0);
        assert_eq!(trace_horizon(&[ul(20.0)], 10.0), 30.0);
    }
}
