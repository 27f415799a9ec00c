//! Line-delimited trace files.
//!
//! A trace file is a header line, one line per event, and a footer line
//! carrying the final configuration and the run outcome, all JSON. Field
//! order is fixed by the structs, so the same run always serializes to
//! the same bytes.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Configuration, Event, RunOutcome, Trace, TraceHeader};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace file is missing its header line")]
    MissingHeader,
    #[error("trace file is missing its footer line")]
    MissingFooter,
}

#[derive(Debug, Deserialize)]
struct Footer<S, V> {
    #[serde(rename = "final")]
    final_config: Configuration<S, V>,
    outcome: RunOutcome,
}

#[derive(Serialize)]
struct FooterRef<'a, S, V> {
    #[serde(rename = "final")]
    final_config: &'a Configuration<S, V>,
    outcome: RunOutcome,
}

pub fn write_trace<S, V, W>(trace: &Trace<S, V>, mut out: W) -> Result<(), FormatError>
where
    S: Serialize,
    V: Serialize,
    W: Write,
{
    let mut line = serde_json::to_string(&trace.header).map_err(|source| FormatError::Json {
        line: 1,
        source,
    })?;
    line.push('\n');
    out.write_all(line.as_bytes())?;
    for (i, ev) in trace.events.iter().enumerate() {
        let mut line = serde_json::to_string(ev).map_err(|source| FormatError::Json {
            line: i + 2,
            source,
        })?;
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    let footer = FooterRef {
        final_config: &trace.final_config,
        outcome: trace.outcome,
    };
    let mut line = serde_json::to_string(&footer).map_err(|source| FormatError::Json {
        line: trace.events.len() + 2,
        source,
    })?;
    line.push('\n');
    out.write_all(line.as_bytes())?;
    Ok(())
}

/// Reads back just the header, enough to decide which protocol a file
/// belongs to.
pub fn read_header<R: BufRead>(mut input: R) -> Result<TraceHeader, FormatError> {
    let mut first = String::new();
    if input.read_line(&mut first)? == 0 {
        return Err(FormatError::MissingHeader);
    }
    serde_json::from_str(&first).map_err(|source| FormatError::Json { line: 1, source })
}

pub fn read_trace<S, V, R>(input: R) -> Result<Trace<S, V>, FormatError>
where
    S: DeserializeOwned,
    V: DeserializeOwned,
    R: BufRead,
{
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err(FormatError::MissingHeader);
    }
    if lines.len() < 2 {
        return Err(FormatError::MissingFooter);
    }
    let header: TraceHeader = serde_json::from_str(&lines[0])
        .map_err(|source| FormatError::Json { line: 1, source })?;
    let mut events: Vec<Event<V>> = Vec::with_capacity(lines.len() - 2);
    for (i, line) in lines[1..lines.len() - 1].iter().enumerate() {
        events.push(serde_json::from_str(line).map_err(|source| FormatError::Json {
            line: i + 2,
            source,
        })?);
    }
    let footer: Footer<S, V> = serde_json::from_str(&lines[lines.len() - 1])
        .map_err(|source| FormatError::Json {
            line: lines.len(),
            source,
        })?;
    Ok(Trace {
        header,
        events,
        outcome: footer.outcome,
        final_config: footer.final_config,
    })
}

/// The whole trace as a byte vector, as `write_trace` would emit it.
pub fn trace_to_bytes<S: Serialize, V: Serialize>(
    trace: &Trace<S, V>,
) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf)?;
    Ok(buf)
}
