//! Session CSV reading and writing.
//!
//! ```text
//! session_id,timestamp,ch1,ch2,ch3,ch4,ch5,label
//! s1,0,3012.5,880.1,190.2,31.7,4.9,background
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, LabeledSequence, PollutantLabel, SensorFrame, NUM_CHANNELS};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "session_id",
    "timestamp",
    "ch1",
    "ch2",
    "ch3",
    "ch4",
    "ch5",
    "label",
];

pub fn load_sessions(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sessions(file, &path.display().to_string())
}

/// Parses a session CSV. Sessions keep the order in which their id first
/// appears; frames within a session are sorted by timestamp.
pub fn read_sessions<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Ok(Dataset::default());
    }
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != CSV_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), header.join(",")),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(SensorFrame, PollutantLabel, u64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            ));
        }
        let session = record[0].trim().to_string();
        let timestamp: u64 = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad timestamp {:?}", &record[1])))?;
        let mut counts = [0.0; NUM_CHANNELS];
        for (k, slot) in counts.iter_mut().enumerate() {
            let field = record[2 + k].trim();
            *slot = field
                .parse()
                .map_err(|_| parse_err(line, format!("bad ch{} value {field:?}", k + 1)))?;
        }
        let frame = SensorFrame::new(timestamp, counts).map_err(|e| parse_err(line, e.to_string()))?;
        let label: PollutantLabel = record[7]
            .trim()
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;

        let entry = rows.entry(session.clone()).or_insert_with(|| {
            order.push(session);
            Vec::new()
        });
        entry.push((frame, label, line));
    }

    let mut sequences = Vec::with_capacity(order.len());
    for id in order {
        let mut items = rows.remove(&id).unwrap_or_default();
        items.sort_by_key(|(f, _, _)| f.timestamp());
        for w in items.windows(2) {
            if w[0].0.timestamp() == w[1].0.timestamp() {
                return Err(parse_err(
                    w[1].2,
                    format!("duplicate timestamp {} in session {id}", w[1].0.timestamp()),
                ));
            }
        }
        let (frames, labels): (Vec<_>, Vec<_>) = items.into_iter().map(|(f, l, _)| (f, l)).unzip();
        sequences.push(LabeledSequence::new(id, frames, labels)?);
    }
    Ok(Dataset::new(sequences))
}

pub fn save_sessions(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_sessions(std::io::BufWriter::new(file), dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Writes a dataset in session CSV form. Counts use the shortest decimal
/// representation that parses back to the same `f64`.
pub fn write_sessions<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let to_io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e.to_string()));
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(CSV_HEADER).map_err(to_io)?;
    for seq in dataset.sequences() {
        for (frame, label) in seq.frames().iter().zip(seq.labels()) {
            let mut row = Vec::with_capacity(CSV_HEADER.len());
            row.push(seq.session_id().to_string());
            row.push(frame.timestamp().to_string());
            row.extend(frame.counts().iter().map(|c| c.to_string()));
            row.push(label.as_str().to_string());
            wtr.write_record(&row).map_err(to_io)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "session_id,timestamp,ch1,ch2,ch3,ch4,ch5,label\n";

    fn parse(body: &str) -> Result<Dataset> {
        read_sessions(format!("{HEADER}{body}").as_bytes(), "test.csv")
    }

    #[test]
    fn two_rows_make_one_session() {
        let ds = parse("s1,0,10,5,2,1,0,ash\ns1,1,11,5,2,1,0,ash\n").unwrap();
        assert_eq!(ds.sequences().len(), 1);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), vec![PollutantLabel::Ash; 2]);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
        assert!(read_sessions(&b""[..], "empty.csv").unwrap().is_empty());
    }

    #[test]
    fn nesting_violation_reports_row_and_channels() {
        let err = parse("s1,0,10,5,2,1,0,ash\ns1,1,5,9,1,0,0,ash\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "{msg}");
        assert!(msg.contains("channel 2") && msg.contains("channel 1"), "{msg}");
    }

    #[test]
    fn malformed_rows_are_rejected_with_line() {
        let err = parse("s1,0,10,5,2,1,0,ash\ns1,x,1,1,1,1,1,ash\n").unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        let err = parse("s1,0,10,5,2,1,ash\n").unwrap_err();
        assert!(err.to_string().contains("fields"), "{err}");
        let err = parse("s1,0,10,5,2,1,0,smoke\n").unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
        let err = parse("s1,0,10,5,2,1,0,ash\ns1,0,10,5,2,1,0,ash\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(read_sessions(&b"a,b,c\n"[..], "x.csv").is_err());
    }

    #[test]
    fn sessions_are_grouped_and_sorted() {
        let ds = parse("a,1,2,1,1,1,1,sand\nb,0,2,1,1,1,1,ash\na,0,3,1,1,1,1,sand\n").unwrap();
        assert_eq!(ds.sequences().len(), 2);
        assert_eq!(ds.sequences()[0].session_id(), "a");
        assert_eq!(ds.sequences()[0].frames()[0].counts()[0], 3.0);
    }

    #[test]
    fn written_files_round_trip_bit_identically() {
        let text = format!("{HEADER}s1,0,1234.5678901234567,0.1,0.1,0,0,candle\ns1,1,3,2,1,1,1,candle\n");
        let ds = read_sessions(text.as_bytes(), "t").unwrap();
        let mut out = Vec::new();
        write_sessions(&mut out, &ds).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
