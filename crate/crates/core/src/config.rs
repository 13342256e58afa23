//! `key = value` configuration file with `[section]` headers.
//!
//! ```text
//! [guest]
//! image = password.bin
//! load_addr = 0x00001000
//! entry_pc = 0x00001000
//! stack_top = 0x00101000
//! max_instructions = 10000000
//! timeout_ms = 2000
//!
//! [probe]
//! tracked = 0x40002000-0x40002000
//!
//! [crash]
//! crash_mode = return_register
//! main_return_pc = 0x00001004
//!
//! [persistent]
//! persistent_entry = 0x00001008
//! persistent_exit = 0x00001004
//!
//! [fuzz]
//! out_dir = out
//! rng_seed = 1
//! ```
//!
//! Unknown sections and keys are errors, as are duplicate keys. Addresses
//! must be written in hex with a `0x` prefix. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::config::{CrashMode, PersistentConfig, VpConfig};
use crate::probe::{AddressRange, ExhaustionPolicy, WritePolicy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Missing(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn line_err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, msg: msg.into() }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuzzSection {
    pub seed_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigFile {
    pub vp: VpConfig,
    pub fuzz: FuzzSection,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("guest", &["image", "load_addr", "entry_pc", "stack_top", "guard", "max_instructions", "timeout_ms"]),
    ("probe", &["tracked", "exhaustion_policy", "write_policy"]),
    ("crash", &["crash_mode", "handler_pc", "main_return_pc"]),
    ("persistent", &["persistent_entry", "persistent_exit", "jump_only"]),
    ("fuzz", &["seed_dir", "out_dir", "rng_seed"]),
];

pub fn parse_addr(s: &str) -> Result<u32, String> {
    let hex = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| format!("address `{s}` must be hex with a 0x prefix"))?;
    u32::from_str_radix(hex, 16).map_err(|e| format!("bad address `{s}`: {e}"))
}

pub fn parse_ranges(s: &str) -> Result<Vec<AddressRange>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p.split_once('-').ok_or_else(|| format!("range `{p}` must be `start-end`"))?;
            let (a, b) = (parse_addr(a.trim())?, parse_addr(b.trim())?);
            AddressRange::new(a, b).ok_or_else(|| format!("range `{p}` has start > end"))
        })
        .collect()
}

fn format_ranges(rs: &[AddressRange]) -> String {
    rs.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

impl ConfigFile {
    pub fn from_vp(vp: VpConfig) -> Self {
        ConfigFile { vp, fuzz: FuzzSection::default() }
    }

    /// Reads a config file; a relative `image` path is resolved against
    /// the file's directory, and so are `seed_dir` and `out_dir`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        let mut cf = Self::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        // join keeps absolute paths as they are
        cf.vp.image = dir.join(&cf.vp.image);
        cf.fuzz.seed_dir = cf.fuzz.seed_dir.map(|p| dir.join(p));
        cf.fuzz.out_dir = cf.fuzz.out_dir.map(|p| dir.join(p));
        Ok(cf)
    }

    pub fn load_image(&self) -> Result<Vec<u8>, ConfigError> {
        std::fs::read(&self.vp.image)
            .map_err(|e| ConfigError::Io { path: self.vp.image.display().to_string(), msg: e.to_string() })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let sections = Self::split(text)?;
        let get = |sec: &str, key: &str| sections.get(sec).and_then(|s| s.get(key));
        let addr = |sec: &str, key: &str| -> Result<Option<u32>, ConfigError> {
            get(sec, key).map(|e| parse_addr(&e.value).map_err(|m| line_err(e.line, m))).transpose()
        };
        let num = |sec: &str, key: &str| -> Result<Option<u64>, ConfigError> {
            get(sec, key)
                .map(|e| e.value.parse::<u64>().map_err(|err| line_err(e.line, format!("`{key}`: {err}"))))
                .transpose()
        };

        let image = get("guest", "image").ok_or_else(|| ConfigError::Missing("[guest] image is required".into()))?;

        let crash_mode_entry =
            get("crash", "crash_mode").ok_or_else(|| ConfigError::Missing("[crash] crash_mode is required".into()))?;
        let crash_mode = match crash_mode_entry.value.as_str() {
            "return_register" => {
                if let Some(e) = get("crash", "handler_pc") {
                    return Err(line_err(e.line, "handler_pc given but crash_mode is return_register"));
                }
                let pc = addr("crash", "main_return_pc")?
                    .ok_or_else(|| ConfigError::Missing("crash_mode = return_register needs main_return_pc".into()))?;
                CrashMode::ReturnRegister { main_return_pc: pc }
            }
            "error_handler" => {
                if let Some(e) = get("crash", "main_return_pc") {
                    return Err(line_err(e.line, "main_return_pc given but crash_mode is error_handler"));
                }
                let pc = addr("crash", "handler_pc")?
                    .ok_or_else(|| ConfigError::Missing("crash_mode = error_handler needs handler_pc".into()))?;
                CrashMode::ErrorHandler { handler_pc: pc }
            }
            other => {
                return Err(line_err(
                    crash_mode_entry.line,
                    format!("crash_mode `{other}` (expected return_register|error_handler)"),
                ))
            }
        };

        let mut vp = VpConfig::new(&image.value, crash_mode);
        if let Some(a) = addr("guest", "load_addr")? {
            vp.load_addr = a;
        }
        if let Some(a) = addr("guest", "entry_pc")? {
            vp.entry_pc = a;
        }
        if let Some(a) = addr("guest", "stack_top")? {
            vp.stack_top = a;
        }
        if let Some(e) = get("guest", "guard") {
            vp.guards = parse_ranges(&e.value).map_err(|m| line_err(e.line, m))?;
        }
        if let Some(n) = num("guest", "max_instructions")? {
            vp.max_instructions = n;
        }
        if let Some(n) = num("guest", "timeout_ms")? {
            vp.wall_clock_timeout_ms = n;
        }
        if let Some(e) = get("probe", "tracked") {
            vp.tracked = parse_ranges(&e.value).map_err(|m| line_err(e.line, m))?;
        }
        if let Some(e) = get("probe", "exhaustion_policy") {
            vp.exhaustion_policy = match e.value.as_str() {
                "end_run" => ExhaustionPolicy::EndRun,
                "zero_fill" => ExhaustionPolicy::ZeroFill,
                v => return Err(line_err(e.line, format!("exhaustion_policy `{v}` (expected end_run|zero_fill)"))),
            };
        }
        if let Some(e) = get("probe", "write_policy") {
            vp.write_policy = match e.value.as_str() {
                "discard" => WritePolicy::Discard,
                "store_to_shadow" => WritePolicy::StoreToShadow,
                v => return Err(line_err(e.line, format!("write_policy `{v}` (expected discard|store_to_shadow)"))),
            };
        }
        if sections.contains_key("persistent") {
            let entry = addr("persistent", "persistent_entry")?
                .ok_or_else(|| ConfigError::Missing("[persistent] needs persistent_entry".into()))?;
            let exit = addr("persistent", "persistent_exit")?
                .ok_or_else(|| ConfigError::Missing("[persistent] needs persistent_exit".into()))?;
            let jump_only = match get("persistent", "jump_only") {
                None => false,
                Some(e) => match e.value.as_str() {
                    "true" => true,
                    "false" => false,
                    v => return Err(line_err(e.line, format!("jump_only `{v}` (expected true|false)"))),
                },
            };
            vp.persistent = Some(PersistentConfig { entry_pc: entry, exit_pc: exit, jump_only });
        }

        let fuzz = FuzzSection {
            seed_dir: get("fuzz", "seed_dir").map(|e| PathBuf::from(&e.value)),
            out_dir: get("fuzz", "out_dir").map(|e| PathBuf::from(&e.value)),
            rng_seed: num("fuzz", "rng_seed")?,
        };
        Ok(ConfigFile { vp, fuzz })
    }

    fn split(text: &str) -> Result<Sections, ConfigError> {
        let mut out = Sections::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            // `#` starts a comment at line start or after whitespace
            let l = match raw.find(" #").or_else(|| raw.find("\t#")) {
                Some(at) => raw[..at].trim(),
                None => raw.trim(),
            };
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return Err(line_err(line, format!("unknown section [{name}]")));
                }
                if out.contains_key(name) {
                    return Err(line_err(line, format!("duplicate section [{name}]")));
                }
                out.insert(name.to_owned(), BTreeMap::new());
                current = Some(name.to_owned());
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| line_err(line, format!("expected `key = value`, got `{l}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = current.as_deref().ok_or_else(|| line_err(line, format!("key `{k}` outside any section")))?;
            let allowed = SECTIONS.iter().find(|(s, _)| *s == sec).map(|(_, keys)| *keys).unwrap_or(&[]);
            if !allowed.contains(&k) {
                return Err(line_err(line, format!("unknown key `{k}` in [{sec}]")));
            }
            let keys = out.get_mut(sec).expect("section inserted");
            if keys.contains_key(k) {
                return Err(line_err(line, format!("duplicate key `{k}`")));
            }
            keys.insert(k.to_owned(), Entry { line, value: v.to_owned() });
        }
        Ok(out)
    }

    /// Writes every field explicitly, so `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let v = &self.vp;
        let mut s = String::new();
        let _ = writeln!(s, "[guest]");
        let _ = writeln!(s, "image = {}", v.image.display());
        let _ = writeln!(s, "load_addr = 0x{:08x}", v.load_addr);
        let _ = writeln!(s, "entry_pc = 0x{:08x}", v.entry_pc);
        let _ = writeln!(s, "stack_top = 0x{:08x}", v.stack_top);
        if !v.guards.is_empty() {
            let _ = writeln!(s, "guard = {}", format_ranges(&v.guards));
        }
        let _ = writeln!(s, "max_instructions = {}", v.max_instructions);
        let _ = writeln!(s, "timeout_ms = {}", v.wall_clock_timeout_ms);
        let _ = writeln!(s, "\n[probe]");
        if !v.tracked.is_empty() {
            let _ = writeln!(s, "tracked = {}", format_ranges(&v.tracked));
        }
        let _ = writeln!(
            s,
            "exhaustion_policy = {}",
            match v.exhaustion_policy {
                ExhaustionPolicy::EndRun => "end_run",
                ExhaustionPolicy::ZeroFill => "zero_fill",
            }
        );
        let _ = writeln!(
            s,
            "write_policy = {}",
            match v.write_policy {
                WritePolicy::Discard => "discard",
                WritePolicy::StoreToShadow => "store_to_shadow",
            }
        );
        let _ = writeln!(s, "\n[crash]");
        match v.crash_mode {
            CrashMode::ReturnRegister { main_return_pc } => {
                let _ = writeln!(s, "crash_mode = return_register\nmain_return_pc = 0x{main_return_pc:08x}");
            }
            CrashMode::ErrorHandler { handler_pc } => {
                let _ = writeln!(s, "crash_mode = error_handler\nhandler_pc = 0x{handler_pc:08x}");
            }
        }
        if let Some(p) = v.persistent {
            let _ = writeln!(s, "\n[persistent]");
            let _ = writeln!(s, "persistent_entry = 0x{:08x}", p.entry_pc);
            let _ = writeln!(s, "persistent_exit = 0x{:08x}", p.exit_pc);
            let _ = writeln!(s, "jump_only = {}", p.jump_only);
        }
        let f = &self.fuzz;
        if f.seed_dir.is_some() || f.out_dir.is_some() || f.rng_seed.is_some() {
            let _ = writeln!(s, "\n[fuzz]");
            if let Some(d) = &f.seed_dir {
                let _ = writeln!(s, "seed_dir = {}", d.display());
            }
            if let Some(d) = &f.out_dir {
                let _ = writeln!(s, "out_dir = {}", d.display());
            }
            if let Some(n) = f.rng_seed {
                let _ = writeln!(s, "rng_seed = {n}");
            }
        }
        s
    }
}
