//! Append-only run event log: one JSON object per line.
//!
//! The header line is the only record carrying a wall-clock timestamp, so
//! two runs of the same seed produce byte-identical logs from line two on.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// First line of every run segment; the only timestamped record.
    RunStart {
        timestamp: String,
        config_hash: String,
        generations: u32,
        islands: u32,
        resumed_from: Option<u32>,
    },
    Candidate {
        generation: u32,
        island: u32,
        candidate_id: u64,
        parent_id: Option<u64>,
        /// Whether the candidate claimed or kept a map cell.
        accepted: bool,
        score: Option<f64>,
        cell: Option<String>,
        repair_attempts: u32,
    },
    GenerationFailure {
        generation: u32,
        island: u32,
        error: String,
    },
    GenerationStats {
        generation: u32,
        filled: u64,
        coverage: f64,
        best_score: Option<f64>,
        archive_size: u64,
    },
    Migration {
        generation: u32,
        source: u32,
        dest: u32,
        candidate_ids: Vec<u64>,
    },
    Curation {
        generation: u32,
        island: u32,
        removed: usize,
        repository_size: usize,
    },
    RunEnd {
        generation: u32,
    },
}

pub struct EventLog {
    writer: BufWriter<File>,
}

impl EventLog {
    /// Open for appending, creating the file if needed.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, event: &Event) -> std::io::Result<()> {
        let line = serde_json::to_string(event).expect("events serialize");
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// Parse a log back into events, skipping blank lines.
pub fn read_events(path: &Path) -> std::io::Result<Vec<Event>> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(line)
            .map_err(|e| std::io::Error::other(format!("line {}: {e}", i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_and_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let mut log = EventLog::open(&path).unwrap();
            log.append(&Event::RunStart {
                timestamp: "2026-01-01T00:00:00Z".into(),
                config_hash: "abc".into(),
                generations: 2,
                islands: 3,
                resumed_from: None,
            })
            .unwrap();
            log.append(&Event::Candidate {
                generation: 1,
                island: 0,
                candidate_id: 4,
                parent_id: Some(1),
                accepted: true,
                score: Some(1.25),
                cell: Some("0|1|2|3|4|101".into()),
                repair_attempts: 0,
            })
            .unwrap();
        }
        {
            // Reopening must append, not truncate.
            let mut log = EventLog::open(&path).unwrap();
            log.append(&Event::RunEnd { generation: 2 }).unwrap();
        }
        let events = read_events(&path).unwrap();
        assert_eq!(events.len(), 3);
        assert!(matches!(events[0], Event::RunStart { .. }));
        assert!(matches!(events[2], Event::RunEnd { generation: 2 }));
        match &events[1] {
            Event::Candidate { score, cell, .. } => {
                assert_eq!(*score, Some(1.25));
                assert_eq!(cell.as_deref(), Some("0|1|2|3|4|101"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn only_run_start_carries_a_timestamp() {
        let stats = Event::GenerationStats {
            generation: 3,
            filled: 10,
            coverage: 0.5,
            best_score: Some(2.0),
            archive_size: 40,
        };
        let line = serde_json::to_string(&stats).unwrap();
        assert!(!line.contains("timestamp"));
    }
}
