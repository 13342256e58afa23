//! Coverage-guided havoc fuzzer.

pub mod campaign;
pub mod mutate;
pub mod queue;
pub mod triage;

pub use campaign::{fuzz_campaign, CampaignError, CampaignOptions, CampaignReport, ClockKind, Executor, FuzzStats, StopCause};
pub use mutate::{mutate_havoc, MutOp, OpHistogram, MAX_INPUT_LEN};
pub use queue::{schedule_next, Queue, QueueEntry};
pub use triage::{CrashRecord, Triage};
