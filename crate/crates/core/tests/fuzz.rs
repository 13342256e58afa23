mod common;

use std::time::{Duration, Instant};

use common::props::{check_campaign_determinism, check_crash_modes, check_prefix_ladder, password_campaign};
use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions, StopCause};
use vpfuzz::guest::{build, build_password_guest};
use vpfuzz::harness::{CrashReason, Deployment, ExecMode, ExitKind, Harness};

fn harness(name: &str) -> Harness {
    let b = build(name, "hello", 1).unwrap();
    Harness::new(b.config, b.binary, Deployment::Embedded, ExecMode::Persistent).unwrap()
}

#[test]
fn always_crash_is_recorded_on_the_first_exec() {
    let mut h = harness("always_crash");
    let opts = CampaignOptions { max_execs: Some(100), ..Default::default() };
    let r = fuzz_campaign(&mut h, &[], &opts).unwrap();
    assert_eq!(r.crashes.len(), 1);
    assert_eq!(r.crashes[0].exec_number, 1);
    assert_eq!(r.first_crash.map(|c| c.0), Some(1));
    assert!(r.stats.crash_events >= 100);
}

#[test]
fn unread_input_never_grows_the_queue() {
    // always_crash never touches the UART; neither does a crash feed the queue
    let mut h = harness("always_crash");
    let seeds = vec![b"a".to_vec(), b"b".to_vec()];
    let r = fuzz_campaign(&mut h, &seeds, &CampaignOptions { max_execs: Some(2000), ..Default::default() }).unwrap();
    assert!(r.queue.len() <= 1);

    let mut h = harness("echo_loop");
    let r = fuzz_campaign(&mut h, &seeds, &CampaignOptions { max_execs: Some(2000), ..Default::default() }).unwrap();
    assert!(!r.queue.is_empty());
    assert_eq!(r.stats.crashes_unique, 0);
}

#[test]
fn prefix_ladder_for_lengths_four_to_six() {
    for pw in ["abcd", "hello", "secret"] {
        let counts = check_prefix_ladder(pw, 1).unwrap();
        assert_eq!(counts.len(), pw.len() + 1);
    }
}

#[test]
fn finds_the_password() {
    let t = Instant::now();
    let r = password_campaign(Duration::from_secs(600), 0).unwrap();
    assert_eq!(r.stop, StopCause::FirstCrash, "{}", r.to_text());
    assert_eq!(r.crashes[0].reason, CrashReason::ReturnValueNonzero(1));
    assert!(t.elapsed() < Duration::from_secs(600));
    let b = build_password_guest("hello", 1).unwrap();
    let mut h = Harness::new(b.config, b.binary, Deployment::Embedded, ExecMode::Restart).unwrap();
    assert_eq!(h.run_case(&r.crashes[0].input).unwrap().exit, ExitKind::Crash(CrashReason::ReturnValueNonzero(1)));
}

#[test]
fn campaigns_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    check_campaign_determinism(d.path(), "password", 400_000).unwrap();
}

#[test]
fn three_crash_mechanisms_stay_distinct() {
    check_crash_modes(b"hello\n").unwrap();
}
