//! Session registry with one append-only `<id>.events.jsonl` file per session.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::SessionError;
use crate::session::{
    system_clock, AnalyticsBundle, Clock, InterveneRequest, InterveneResponse, JudgeRequest, JudgeResponse,
    NsQuery, ScoreReport, ScoringMode, Session, SessionEvent, SessionSpec, Snapshot,
};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Where logs live; sessions are kept in memory only when `None`.
    pub data_dir: Option<PathBuf>,
    /// Server-wide analytics switch; a session also has to ask for them.
    pub analytics: bool,
}

pub struct Store {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    clock: Clock,
}

pub fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.events.jsonl"))
}

/// Reads one session log.
pub fn read_log(path: &Path) -> Result<Vec<SessionEvent>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: SessionEvent = serde_json::from_str(&line)
            .map_err(|e| SessionError::Replay(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

impl Store {
    /// Opens the store, replaying every log found in the data directory.
    pub fn open(config: ServiceConfig) -> Result<Store, SessionError> {
        Store::with_clock(config, system_clock())
    }

    pub fn with_clock(config: ServiceConfig, clock: Clock) -> Result<Store, SessionError> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
                .collect();
            paths.sort();
            for p in paths {
                let mut s = Session::replay(&read_log(&p)?, config.analytics)?;
                s.set_clock(clock.clone());
                sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(Store {
            config,
            sessions: RwLock::new(sessions),
            clock,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn create(&self, spec: &SessionSpec) -> Result<Snapshot, SessionError> {
        let plan = spec.resolve()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(id.clone(), plan, self.config.analytics, self.clock.clone());
        self.persist(&session, 0)?;
        let snap = session.snapshot();
        self.sessions
            .write()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(snap)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Runs `f` with the session locked and appends any new events to its log.
    fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let handle = self.get(id)?;
        let mut s = handle.lock().unwrap();
        let before = s.events().len();
        let out = f(&mut s)?;
        self.persist(&s, before)?;
        Ok(out)
    }

    fn persist(&self, s: &Session, from: usize) -> Result<(), SessionError> {
        let dir = match &self.config.data_dir {
            Some(d) => d,
            None => return Ok(()),
        };
        let new = &s.events()[from..];
        if !new.is_empty() {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(log_path(dir, s.id()))?;
            let mut buf = String::new();
            for e in new {
                buf.push_str(&serde_json::to_string(e).expect("events serialise"));
                buf.push('\n');
            }
            f.write_all(buf.as_bytes())?;
        }
        if new.iter().any(|e| matches!(e.event, crate::session::Event::FreeText { .. })) {
            std::fs::write(dir.join(format!("{}.free_text.csv", s.id())), s.export_free_text()?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, id: &str) -> Result<Snapshot, SessionError> {
        Ok(self.get(id)?.lock().unwrap().snapshot())
    }

    pub fn intervene(&self, id: &str, req: &InterveneRequest) -> Result<InterveneResponse, SessionError> {
        self.mutate(id, |s| s.intervene(req))
    }

    pub fn judge(&self, id: &str, req: &JudgeRequest) -> Result<JudgeResponse, SessionError> {
        self.mutate(id, |s| s.judge(req))
    }

    pub fn analytics(&self, id: &str, ns: NsQuery) -> Result<AnalyticsBundle, SessionError> {
        self.get(id)?.lock().unwrap().analytics(ns)
    }

    pub fn score(&self, id: &str, mode: ScoringMode) -> Result<ScoreReport, SessionError> {
        Ok(self.get(id)?.lock().unwrap().score(mode))
    }

    pub fn events(&self, id: &str) -> Result<Vec<SessionEvent>, SessionError> {
        Ok(self.get(id)?.lock().unwrap().events().to_vec())
    }

    pub fn export_csv(&self, id: &str) -> Result<String, SessionError> {
        self.get(id)?.lock().unwrap().export_csv()
    }

    pub fn export_free_text(&self, id: &str) -> Result<String, SessionError> {
        self.get(id)?.lock().unwrap().export_free_text()
    }
}
