//! Candidate persistence: an append-only JSON-lines event log plus a
//! snapshot rewritten by write-then-rename after every mutation.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use nonwoven::dataset::write_atomic;
use nonwoven::explore::{Candidate, Evaluated, Status, ValidationRecord, Verdict};
use nonwoven::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub next_id: u64,
    pub candidates: BTreeMap<u64, Candidate>,
    pub records: Vec<ValidationRecord>,
    /// Number of log events folded into this state.
    pub applied: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Candidate(Candidate),
    Record(ValidationRecord),
}

impl StoreState {
    fn apply(&mut self, e: &Event) {
        match e {
            Event::Candidate(c) => {
                self.next_id = self.next_id.max(c.candidate_id + 1);
                self.candidates.insert(c.candidate_id, c.clone());
            }
            Event::Record(r) => self.records.push(r.clone()),
        }
        self.applied += 1;
    }
}

pub struct CandidateStore {
    dir: PathBuf,
    state: StoreState,
    log: File,
}

impl CandidateStore {
    pub const LOG: &'static str = "events.jsonl";
    pub const SNAPSHOT: &'static str = "snapshot.json";

    /// Opens or creates the store. The snapshot is loaded first, then any
    /// later log events are replayed; a torn final log line is ignored.
    /// Candidates left `simulating` by a previous process have lost their
    /// job and are returned to `proposed`.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut state: StoreState = match std::fs::read(dir.join(Self::SNAPSHOT)) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreState::default(),
            Err(e) => return Err(e.into()),
        };
        let log_path = dir.join(Self::LOG);
        if let Ok(text) = std::fs::read_to_string(&log_path) {
            let events: Vec<Event> = text.lines().map_while(|l| serde_json::from_str(l).ok()).collect();
            for e in events.iter().skip(state.applied as usize) {
                state.apply(e);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut store = CandidateStore {
            dir: dir.to_path_buf(),
            state,
            log,
        };
        let stale: Vec<Candidate> = store
            .state
            .candidates
            .values()
            .filter(|c| c.status == Status::Simulating)
            .cloned()
            .map(|mut c| {
                c.status = Status::Proposed;
                c
            })
            .collect();
        store.commit(stale.into_iter().map(Event::Candidate).collect())?;
        Ok(store)
    }

    fn commit(&mut self, events: Vec<Event>) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in &events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        self.log.write_all(&buf)?;
        self.log.sync_data()?;
        for e in &events {
            self.state.apply(e);
        }
        write_atomic(&self.dir.join(Self::SNAPSHOT), &serde_json::to_vec_pretty(&self.state)?)
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.state.candidates.values().cloned().collect()
    }

    pub fn get(&self, id: u64) -> Result<&Candidate> {
        self.state
            .candidates
            .get(&id)
            .ok_or_else(|| Error::NotFound(format!("candidate {id}")))
    }

    /// Registers each evaluated setting as a new `proposed` candidate.
    pub fn propose(&mut self, items: &[Evaluated]) -> Result<Vec<Candidate>> {
        let first = self.state.next_id;
        let new: Vec<Candidate> = items
            .iter()
            .enumerate()
            .map(|(i, e)| Candidate::proposed(first + i as u64, e))
            .collect();
        self.commit(new.iter().cloned().map(Event::Candidate).collect())?;
        Ok(new)
    }

    /// Applies `edit` to a copy of the candidate, checks the status edge and
    /// persists the result.
    pub fn update(&mut self, id: u64, to: Status, edit: impl FnOnce(&mut Candidate)) -> Result<Candidate> {
        let mut c = self.get(id)?.clone();
        c.transition(to)?;
        edit(&mut c);
        self.commit(vec![Event::Candidate(c.clone())])?;
        Ok(c)
    }

    pub fn record_validation(&mut self, id: u64, verdict: Verdict, reason: &str) -> Result<ValidationRecord> {
        let mut c = self.get(id)?.clone();
        c.transition(verdict.status())?;
        let record = ValidationRecord {
            candidate_id: id,
            verdict,
            reason: reason.to_string(),
            timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        };
        self.commit(vec![Event::Candidate(c), Event::Record(record.clone())])?;
        Ok(record)
    }
}
