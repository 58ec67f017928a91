//! Append-only JSON-lines event storage with state snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{EventRecord, RuntimeState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorruptRecord {
    /// 1-based line number of the first unusable record.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedLog {
    /// The valid prefix of the log.
    pub records: Vec<EventRecord>,
    pub stopped: Option<CorruptRecord>,
    pub snapshots: Vec<RuntimeState>,
}

/// Where a runtime journals its records.
pub trait EventStore: Send {
    fn append(&mut self, record: &EventRecord) -> io::Result<()>;
    fn write_snapshot(&mut self, state: &RuntimeState) -> io::Result<()>;
    fn load(&self) -> io::Result<LoadedLog>;
    /// Keeps only the first `records` records.
    fn truncate(&mut self, records: usize) -> io::Result<()>;
}

pub fn record_line(record: &EventRecord) -> String {
    serde_json::to_string(record).expect("records serialize")
}

/// Parses JSON lines up to the first corrupt or out-of-order record.
pub fn parse_log(text: &str) -> (Vec<EventRecord>, Option<CorruptRecord>) {
    let mut records: Vec<EventRecord> = Vec::new();
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let stop = |reason: String| Some(CorruptRecord { line: i + 1, reason });
        if i + 1 == lines.len() && !complete {
            return (records, stop("truncated final record".into()));
        }
        let rec: EventRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return (records, stop(e.to_string())),
        };
        if let Some(prev) = records.last().map(|r| r.seq) {
            if rec.seq <= prev {
                return (records, stop(format!("sequence {} after {prev}", rec.seq)));
            }
        }
        records.push(rec);
    }
    (records, None)
}

fn snapshot_json(state: &RuntimeState) -> String {
    serde_json::to_string(state).expect("state serializes")
}

#[derive(Debug, Default)]
struct MemoryInner {
    log: String,
    snapshots: Vec<String>,
}

/// In-memory store. Clones share the same buffers, so a test can keep a
/// handle while the runtime owns another.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore(Arc<Mutex<MemoryInner>>);

impl MemoryStore {
    pub fn from_log(text: &str) -> Self {
        let store = Self::default();
        store.lock().log = text.to_string();
        store
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MemoryInner> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn log_text(&self) -> String {
        self.lock().log.clone()
    }

    /// A copy holding only the first `records` log lines and the snapshots
    /// taken up to that point.
    pub fn prefix(&self, records: usize) -> Self {
        let inner = self.lock();
        let log: String = inner.log.split_inclusive('\n').take(records).collect();
        let last_seq = log
            .lines()
            .last()
            .and_then(|l| serde_json::from_str::<EventRecord>(l).ok())
            .map_or(0, |r| r.seq);
        let snapshots = inner
            .snapshots
            .iter()
            .filter(|s| serde_json::from_str::<RuntimeState>(s).is_ok_and(|st| st.seq <= last_seq))
            .cloned()
            .collect();
        Self(Arc::new(Mutex::new(MemoryInner { log, snapshots })))
    }
}

impl EventStore for MemoryStore {
    fn append(&mut self, record: &EventRecord) -> io::Result<()> {
        let line = record_line(record);
        let mut inner = self.lock();
        inner.log.push_str(&line);
        inner.log.push('\n');
        Ok(())
    }

    fn write_snapshot(&mut self, state: &RuntimeState) -> io::Result<()> {
        self.lock().snapshots.push(snapshot_json(state));
        Ok(())
    }

    fn load(&self) -> io::Result<LoadedLog> {
        let inner = self.lock();
        let (records, stopped) = parse_log(&inner.log);
        let snapshots = inner
            .snapshots
            .iter()
            .filter_map(|s| serde_json::from_str(s).ok())
            .collect();
        Ok(LoadedLog {
            records,
            stopped,
            snapshots,
        })
    }

    fn truncate(&mut self, records: usize) -> io::Result<()> {
        let mut inner = self.lock();
        inner.log = inner.log.split_inclusive('\n').take(records).collect();
        Ok(())
    }
}

/// `events.jsonl` plus `snapshot-initial.json` and `snapshot.json` in one directory.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    log: File,
}

impl FileStore {
    pub const LOG: &'static str = "events.jsonl";
    pub const SNAPSHOT: &'static str = "snapshot.json";
    pub const INITIAL: &'static str = "snapshot-initial.json";

    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(Self::LOG))?;
        Ok(Self { dir, log })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_atomic(&self, name: &str, contents: &str) -> io::Result<()> {
        let tmp = self.dir.join(format!("{name}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(contents.as_bytes())?;
            f.sync_data()?;
        }
        fs::rename(tmp, self.dir.join(name))
    }
}

impl EventStore for FileStore {
    fn append(&mut self, record: &EventRecord) -> io::Result<()> {
        let mut line = record_line(record);
        line.push('\n');
        self.log.write_all(line.as_bytes())
    }

    fn write_snapshot(&mut self, state: &RuntimeState) -> io::Result<()> {
        let json = snapshot_json(state);
        if state.seq == 0 && !self.dir.join(Self::INITIAL).exists() {
            self.write_atomic(Self::INITIAL, &json)?;
        }
        self.write_atomic(Self::SNAPSHOT, &json)
    }

    fn load(&self) -> io::Result<LoadedLog> {
        let text = match fs::read_to_string(self.dir.join(Self::LOG)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        let (records, stopped) = parse_log(&text);
        let mut snapshots = vec![];
        for name in [Self::INITIAL, Self::SNAPSHOT] {
            if let Ok(s) = fs::read_to_string(self.dir.join(name)) {
                match serde_json::from_str(&s) {
                    Ok(state) => snapshots.push(state),
                    Err(e) => log::warn!("ignoring unreadable {name}: {e}"),
                }
            }
        }
        Ok(LoadedLog {
            records,
            stopped,
            snapshots,
        })
    }

    fn truncate(&mut self, records: usize) -> io::Result<()> {
        let text = fs::read_to_string(self.dir.join(Self::LOG))?;
        let kept: String = text.split_inclusive('\n').take(records).collect();
        self.write_atomic(Self::LOG, &kept)?;
        self.log = OpenOptions::new().append(true).open(self.dir.join(Self::LOG))?;
        Ok(())
    }
}
