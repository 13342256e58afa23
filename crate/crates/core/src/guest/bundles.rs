//! Sample guests with ready-made VP configurations.
//!
//! Every bundle shares one layout: `_start` calls `main`, `main` returns
//! its verdict in `a0`, and `main_return` (the instruction after the call)
//! issues `ecall`. Input arrives through a one-byte UART data register.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::asm::{assemble, AsmError, Assembled};
use crate::config::ConfigFile;
use crate::harness::config::{CrashMode, PersistentConfig, VpConfig};
use crate::isa::memory::DEFAULT_RAM_BASE;
use crate::probe::AddressRange;

pub const UART_DATA: u32 = 0x4000_2000;
/// Size of the password guest's receive buffer.
pub const READ_BUF_LEN: usize = 128;

pub const BUNDLE_NAMES: [&str; 6] =
    ["password", "password_overflow", "always_crash", "echo_loop", "fault_write", "handler_guest"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GuestError {
    #[error("password must be 1..=64 lowercase letters, got {0:?}")]
    BadPassword(String),
    #[error("shift must be in 1..=25, got {0}")]
    BadShift(u32),
    #[error("unknown guest `{0}` (known: {known})", known = BUNDLE_NAMES.join(", "))]
    UnknownGuest(String),
    #[error("assembly failed: {0}")]
    Asm(#[from] AsmError),
    #[error("symbol `{0}` missing from the assembled guest")]
    MissingSymbol(&'static str),
}

#[derive(Clone, Debug)]
pub struct GuestBundle {
    pub name: String,
    pub source: String,
    pub binary: Vec<u8>,
    pub symbols: BTreeMap<String, u32>,
    /// Image path is `<name>.bin`, relative to wherever the bundle is written.
    pub config: VpConfig,
    pub expected: Vec<String>,
}

impl GuestBundle {
    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// `symbol address` lines, sorted by name.
    pub fn sym_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.symbols {
            let _ = writeln!(s, "{k} 0x{v:08x}");
        }
        s
    }

    pub fn config_text(&self) -> String {
        ConfigFile::from_vp(self.config.clone()).to_text()
    }

    /// Writes `<name>.bin`, `<name>.sym` and `<name>.cfg` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (format!("{}.bin", self.name), self.binary.clone()),
            (format!("{}.sym", self.name), self.sym_text().into_bytes()),
            (format!("{}.cfg", self.name), self.config_text().into_bytes()),
        ];
        let mut out = Vec::new();
        for (f, data) in files {
            let p = dir.join(f);
            std::fs::write(&p, data)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Caesar shift of lowercase letters; everything else passes through.
pub fn caesar(text: &[u8], shift: u32) -> Vec<u8> {
    text.iter().map(|&c| if c.is_ascii_lowercase() { b'a' + ((c - b'a') as u32 + shift) as u8 % 26 } else { c }).collect()
}

const PROLOGUE: &str = "\
.equ UART, 0x40002000
_start:
    jal ra, main
main_return:
    ecall
";

fn sym(a: &Assembled, name: &'static str) -> Result<u32, GuestError> {
    a.symbol(name).ok_or(GuestError::MissingSymbol(name))
}

fn finish(
    name: &str,
    source: String,
    tracked: bool,
    crash_symbol: Option<&'static str>,
    guard: Option<(&'static str, u32)>,
    expected: &[&str],
) -> Result<GuestBundle, GuestError> {
    let a = assemble(&source, DEFAULT_RAM_BASE)?;
    let main_return = sym(&a, "main_return")?;
    let crash_mode = match crash_symbol {
        Some(s) => CrashMode::ErrorHandler { handler_pc: sym(&a, s)? },
        None => CrashMode::ReturnRegister { main_return_pc: main_return },
    };
    let mut config = VpConfig::new(format!("{name}.bin"), crash_mode);
    config.entry_pc = sym(&a, "_start")?;
    if tracked {
        config.tracked = vec![AddressRange { start: UART_DATA, end: UART_DATA }];
    }
    if let Some((s, len)) = guard {
        let start = sym(&a, s)?;
        config.guards = vec![AddressRange { start, end: start + len - 1 }];
    }
    config.persistent = Some(PersistentConfig { entry_pc: sym(&a, "main")?, exit_pc: main_return, jump_only: false });
    Ok(GuestBundle {
        name: name.to_owned(),
        source,
        binary: a.bytes,
        symbols: a.symbols,
        config,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    })
}

/// Assembly for the password check. `capped` bounds the read loop at the
/// buffer size; without it a long line runs into the guard zone.
pub fn password_source(password: &str, shift: u32, capped: bool) -> Result<String, GuestError> {
    if password.is_empty() || password.len() > 64 || !password.bytes().all(|c| c.is_ascii_lowercase()) {
        return Err(GuestError::BadPassword(password.to_owned()));
    }
    if !(1..=25).contains(&shift) {
        return Err(GuestError::BadShift(shift));
    }
    let cipher = caesar(password.as_bytes(), shift);
    let mut s = String::from(PROLOGUE);
    s.push_str(&format!(
        "\
main:
    la   s0, read_str
    li   s1, UART
    li   s2, 0                # i
    li   s3, {READ_BUF_LEN}
    li   s4, '\\n'
read_loop:
    lbu  t0, 0(s1)
    add  t1, s0, s2
    sb   t0, 0(t1)
    addi s2, s2, 1
    beq  t0, s4, read_done
    beqz t0, read_done
"
    ));
    if capped {
        s.push_str("    blt  s2, s3, read_loop\n");
    } else {
        s.push_str("    j    read_loop\n");
    }
    s.push_str(&format!(
        "\
read_done:
    add  t1, s0, s2
    sb   zero, -1(t1)         # read_str[i-1] = 0
    mv   t1, s0
    li   t3, 'z'
caesar_loop:
    lbu  t0, 0(t1)
    beqz t0, caesar_done
    li   t2, 'a'
    bltu t0, t2, caesar_next
    bltu t3, t0, caesar_next
    addi t0, t0, {shift}
    bgeu t3, t0, caesar_store
    addi t0, t0, -26
caesar_store:
    sb   t0, 0(t1)
caesar_next:
    addi t1, t1, 1
    j    caesar_loop
caesar_done:
"
    ));
    for (i, &c) in cipher.iter().enumerate() {
        let _ = write!(
            s,
            "\
cmp_{i}:
    lbu  t0, {i}(s0)
    li   t1, {c}
    beq  t0, t1, cmp_{next}
    j    mismatch
",
            next = i + 1
        );
    }
    let l = cipher.len();
    let _ = write!(
        s,
        "\
cmp_{l}:
    lbu  t0, {l}(s0)
    beqz t0, match
    j    mismatch
match:
    li   a0, 1
    ret
mismatch:
    li   a0, 0
    ret

.align 4
password_enc:
    .ascii \"{}\"
    .byte 0
.align 4
read_str:
    .space {READ_BUF_LEN}
guard_zone:
    .space 16
",
        String::from_utf8_lossy(&cipher)
    );
    Ok(s)
}

/// The Caesar-hardened password check: exits 1 iff the line read from the
/// UART equals `password`.
pub fn build_password_guest(password: &str, shift: u32) -> Result<GuestBundle, GuestError> {
    let src = password_source(password, shift, true)?;
    finish(
        "password",
        src,
        true,
        None,
        Some(("guard_zone", 16)),
        &["password + \"\\n\" -> CRASH return_value=1", "any other line -> OK", "no terminator -> INPUT_EXHAUSTED"],
    )
}

/// Same check without the read bound: a line longer than the buffer faults
/// on the guard zone.
pub fn build_password_overflow_guest(password: &str, shift: u32) -> Result<GuestBundle, GuestError> {
    let src = password_source(password, shift, false)?;
    finish(
        "password_overflow",
        src,
        true,
        None,
        Some(("guard_zone", 16)),
        &["password + \"\\n\" -> CRASH return_value=1", "129+ bytes without a terminator -> CRASH hardware_fault"],
    )
}

pub fn build_always_crash() -> Result<GuestBundle, GuestError> {
    let src = format!("{PROLOGUE}main:\n    li   a0, 1\n    ret\n");
    finish("always_crash", src, true, None, None, &["any input -> CRASH return_value=1"])
}

/// Reads the UART and writes each byte back until input runs out.
pub fn build_echo_loop() -> Result<GuestBundle, GuestError> {
    let src = format!(
        "{PROLOGUE}\
main:
    li   s1, UART
echo:
    lbu  t0, 0(s1)
    sb   t0, 0(s1)
    j    echo
"
    );
    finish("echo_loop", src, true, None, None, &["any input -> INPUT_EXHAUSTED"])
}

/// Stores to unmapped memory when the first input byte is 0xA5.
pub fn build_fault_write() -> Result<GuestBundle, GuestError> {
    let src = format!(
        "{PROLOGUE}\
main:
    li   s1, UART
    lbu  t0, 0(s1)
    li   t1, 0xa5
    beq  t0, t1, boom
    li   a0, 0
    ret
boom:
    li   t2, 0x20000000
    sw   t0, 0(t2)
    li   a0, 0
    ret
"
    );
    finish("fault_write", src, true, None, None, &["0xA5 first -> CRASH hardware_fault", "other first byte -> OK"])
}

/// Reads a length byte and that many payload bytes into a 16-byte buffer;
/// a length over 16 is rejected by jumping to `error_handler`.
pub fn build_handler_guest() -> Result<GuestBundle, GuestError> {
    let src = format!(
        "{PROLOGUE}\
main:
    li   s1, UART
    la   s0, buf
    lbu  s2, 0(s1)            # n
    li   t1, 16
    bltu t1, s2, error_handler
    li   t2, 0
copy:
    beq  t2, s2, done
    lbu  t0, 0(s1)
    add  t3, s0, t2
    sb   t0, 0(t3)
    addi t2, t2, 1
    j    copy
done:
    li   a0, 0
    ret
error_handler:
    j    error_handler

.align 4
buf:
    .space 16
"
    );
    finish(
        "handler_guest",
        src,
        true,
        Some("error_handler"),
        None,
        &["first byte > 16 -> CRASH error_handler", "n <= 16 followed by n bytes -> OK", "short payload -> INPUT_EXHAUSTED"],
    )
}

/// Builds a bundle by name. `password`/`shift` only apply to the password guests.
pub fn build(name: &str, password: &str, shift: u32) -> Result<GuestBundle, GuestError> {
    match name {
        "password" => build_password_guest(password, shift),
        "password_overflow" => build_password_overflow_guest(password, shift),
        "always_crash" => build_always_crash(),
        "echo_loop" => build_echo_loop(),
        "fault_write" => build_fault_write(),
        "handler_guest" => build_handler_guest(),
        other => Err(GuestError::UnknownGuest(other.to_owned())),
    }
}
