//! Crash deduplication and persistence.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::harness::{CrashReason, RunResult};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrashRecord {
    pub input: Vec<u8>,
    pub reason: CrashReason,
    /// Digest of the classified coverage map.
    pub coverage_digest: u64,
    /// 1-based campaign execution number that found it.
    pub exec_number: u64,
    pub file: Option<String>,
}

impl CrashRecord {
    pub fn dedup_key(&self) -> (&'static str, u64) {
        (self.reason.tag(), self.coverage_digest)
    }

    pub fn file_name(&self, index: usize) -> String {
        format!("id_{index:06}_{}_{:016x}", self.reason.tag(), self.coverage_digest)
    }

    pub fn meta_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "reason = {}", self.reason);
        let _ = writeln!(s, "tag = {}", self.reason.tag());
        let _ = writeln!(s, "digest = {:016x}", self.coverage_digest);
        let _ = writeln!(s, "exec = {}", self.exec_number);
        let _ = writeln!(s, "len = {}", self.input.len());
        s
    }
}

/// Keeps one record per (reason tag, coverage digest).
#[derive(Debug, Default)]
pub struct Triage {
    seen: HashSet<(&'static str, u64)>,
    records: Vec<CrashRecord>,
    dir: Option<PathBuf>,
    warnings: Vec<String>,
    events: u64,
}

impl Triage {
    /// Stores crash files under `dir` when given.
    pub fn new(dir: Option<PathBuf>) -> Self {
        Triage { dir, ..Default::default() }
    }

    pub fn records(&self) -> &[CrashRecord] {
        &self.records
    }

    pub fn unique(&self) -> usize {
        self.records.len()
    }

    /// Every crash seen, duplicates included.
    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    /// Records a crashing run. `digest` is the classified-map digest.
    /// Returns true if this is a new unique crash. Write failures become
    /// warnings.
    pub fn triage_crash(&mut self, result: &RunResult, digest: u64, input: &[u8], exec_number: u64) -> bool {
        let reason = result.exit.crash_reason().expect("triage_crash needs a crash result");
        self.events += 1;
        if !self.seen.insert((reason.tag(), digest)) {
            return false;
        }
        let mut rec = CrashRecord { input: input.to_vec(), reason, coverage_digest: digest, exec_number, file: None };
        if let Some(dir) = &self.dir {
            let name = rec.file_name(self.records.len());
            let written = std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(dir.join(&name), input))
                .and_then(|_| std::fs::write(dir.join(format!("{name}.meta")), rec.meta_text()));
            match written {
                Ok(()) => rec.file = Some(name),
                Err(e) => self.warnings.push(format!("could not persist crash {name}: {e}")),
            }
        }
        self.records.push(rec);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::CoverageMap;
    use crate::harness::ExitKind;

    fn crash(reason: CrashReason) -> RunResult {
        RunResult { exit: ExitKind::Crash(reason), coverage: CoverageMap::new(), instructions: 1, probe_reads: None, exec_us: 1 }
    }

    #[test]
    fn same_reason_same_digest_dedups() {
        let mut t = Triage::new(None);
        let r = crash(CrashReason::ReturnValueNonzero(1));
        assert!(t.triage_crash(&r, 5, b"a", 1));
        assert!(!t.triage_crash(&r, 5, b"b", 2));
        assert_eq!(t.unique(), 1);
        assert_eq!(t.events(), 2);
    }

    #[test]
    fn different_digest_or_reason_is_distinct() {
        let mut t = Triage::new(None);
        assert!(t.triage_crash(&crash(CrashReason::ReturnValueNonzero(1)), 5, b"a", 1));
        assert!(t.triage_crash(&crash(CrashReason::ReturnValueNonzero(1)), 6, b"a", 2));
        assert!(t.triage_crash(&crash(CrashReason::ErrorHandlerReached), 6, b"a", 3));
        assert_eq!(t.unique(), 3);
    }

    #[test]
    fn writes_input_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Triage::new(Some(dir.path().to_path_buf()));
        t.triage_crash(&crash(CrashReason::ReturnValueNonzero(1)), 0xab, b"hello\n", 9);
        let name = t.records()[0].file.clone().unwrap();
        assert_eq!(std::fs::read(dir.path().join(&name)).unwrap(), b"hello\n");
        let meta = std::fs::read_to_string(dir.path().join(format!("{name}.meta"))).unwrap();
        assert!(meta.contains("reason = return_value=1"));
        assert!(meta.contains("exec = 9"));
    }

    #[test]
    fn unwritable_dir_warns() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let mut t = Triage::new(Some(f.path().join("sub")));
        assert!(t.triage_crash(&crash(CrashReason::ErrorHandlerReached), 1, b"x", 1));
        assert_eq!(t.take_warnings().len(), 1);
        assert_eq!(t.unique(), 1);
    }
}
