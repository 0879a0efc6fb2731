//! Man-on-the-side packet injection testbed.
//!
//! A deterministic simulator with just enough TCP, HTTP and IEC 60870-5-104 to
//! reproduce injection races on a switched lab network, record what a mirror
//! port sees, and analyze those captures offline.

pub mod capture;
pub mod detect;
pub mod httpmini;
pub mod iec104;
pub mod mots;
pub mod simnet;
pub mod tcpstack;
pub mod wire;
