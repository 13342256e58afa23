//! Hermetic guest tooling: an assembler and a set of bundled guests.

pub mod asm;
pub mod bundles;

pub use asm::{assemble, AsmError, Assembled};
pub use bundles::{build, build_password_guest, caesar, GuestBundle, GuestError, BUNDLE_NAMES, UART_DATA};
