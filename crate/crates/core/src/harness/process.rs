//! Process deployment: the VP runs as a child (`vpfuzz vp`) and the two
//! sides exchange frames over the child's stdin/stdout.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{read_frame, write_frame, Message, ReadError};
use super::result::RunResult;
use super::vp::{StageTimings, Vp};
use super::{HarnessError, VpHandle};
use crate::config::ConfigFile;
use crate::harness::config::VpConfig;

/// Extra time granted over the per-run timeout before the child is killed.
const KILL_GRACE: Duration = Duration::from_millis(250);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

pub struct ProcessVp {
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Result<Message, String>>,
    timeout: Duration,
    timings: StageTimings,
}

impl ProcessVp {
    pub fn spawn(exe: &Path, config: &VpConfig, image: &[u8]) -> Result<Self, HarnessError> {
        let t0 = Instant::now();
        let mut child = Command::new(exe)
            .arg("vp")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| HarnessError::Spawn(format!("{}: {e}", exe.display())))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let msg = match read_frame(&mut r) {
                    Ok(Some(m)) => Ok(m),
                    Ok(None) => break,
                    Err(ReadError::Io(e)) => Err(e.to_string()),
                    Err(ReadError::Frame(e)) => Err(e.to_string()),
                };
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        let mut vp = ProcessVp {
            child,
            stdin,
            rx,
            timeout: Duration::from_millis(config.wall_clock_timeout_ms) + KILL_GRACE,
            timings: StageTimings::default(),
        };

        vp.expect_ready(HANDSHAKE_TIMEOUT)?;
        vp.timings.startup = t0.elapsed();

        let t1 = Instant::now();
        let text = ConfigFile::from_vp(config.clone()).to_text();
        vp.send(&Message::Configure { config: text, image: image.to_vec() })
            .map_err(|e| HarnessError::Handshake(e.to_string()))?;
        vp.expect_ready(HANDSHAKE_TIMEOUT)?;
        vp.timings.config = t1.elapsed();
        Ok(vp)
    }

    fn send(&mut self, msg: &Message) -> io::Result<()> {
        let stdin = self.stdin.as_mut().ok_or_else(|| io::Error::from(io::ErrorKind::BrokenPipe))?;
        write_frame(stdin, msg)
    }

    fn expect_ready(&mut self, timeout: Duration) -> Result<(), HarnessError> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(Message::Ready)) => Ok(()),
            Ok(Ok(Message::Error(e))) => Err(HarnessError::Handshake(e)),
            Ok(Ok(other)) => Err(HarnessError::Handshake(format!("expected READY, got type 0x{:02x}", other.msg_type()))),
            Ok(Err(e)) => Err(HarnessError::Handshake(e)),
            Err(RecvTimeoutError::Timeout) => Err(HarnessError::Handshake("timed out waiting for READY".into())),
            Err(RecvTimeoutError::Disconnected) => Err(HarnessError::Handshake("VP exited during handshake".into())),
        }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl VpHandle for ProcessVp {
    fn run(&mut self, input: &[u8]) -> Result<RunResult, HarnessError> {
        if self.send(&Message::Run(input.to_vec())).is_err() {
            return Err(HarnessError::ChildDied);
        }
        match self.rx.recv_timeout(self.timeout) {
            Ok(Ok(Message::Result(r))) => Ok(*r),
            Ok(Ok(Message::Error(e))) => Err(HarnessError::Protocol(e)),
            Ok(Ok(other)) => Err(HarnessError::Protocol(format!("unexpected message type 0x{:02x}", other.msg_type()))),
            Ok(Err(e)) => Err(HarnessError::Protocol(e)),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(HarnessError::WallClockTimeout)
            }
            Err(RecvTimeoutError::Disconnected) => Err(HarnessError::ChildDied),
        }
    }

    fn timings(&self) -> StageTimings {
        self.timings
    }
}

impl Drop for ProcessVp {
    fn drop(&mut self) {
        if self.send(&Message::Shutdown).is_ok() {
            drop(self.stdin.take());
            // a healthy child exits right away; don't hang on a wedged one
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_micros(50));
            }
        }
        self.kill();
    }
}

/// Child side of the process deployment: serves frames until SHUTDOWN or EOF.
pub fn serve<R: Read, W: Write>(input: R, output: W) -> io::Result<()> {
    let mut r = BufReader::new(input);
    let mut w = BufWriter::new(output);
    let mut vp = Vp::new();
    write_frame(&mut w, &Message::Ready)?;
    loop {
        let msg = match read_frame(&mut r) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e) => {
                write_frame(&mut w, &Message::Error(e.to_string()))?;
                return Ok(());
            }
        };
        match msg {
            Message::Configure { config, image } => {
                let reply = match ConfigFile::parse(&config) {
                    Ok(cf) => match vp.configure(&cf.vp, &image) {
                        Ok(()) => Message::Ready,
                        Err(e) => Message::Error(e.to_string()),
                    },
                    Err(e) => Message::Error(e.to_string()),
                };
                write_frame(&mut w, &reply)?;
            }
            Message::Run(input) => {
                let reply = if vp.is_configured() {
                    Message::Result(Box::new(vp.run(&input)))
                } else {
                    Message::Error("RUN before CONFIGURE".into())
                };
                write_frame(&mut w, &reply)?;
            }
            Message::Shutdown => return Ok(()),
            other => {
                write_frame(&mut w, &Message::Error(format!("unexpected message type 0x{:02x}", other.msg_type())))?;
            }
        }
    }
}
