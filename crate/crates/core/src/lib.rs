//! Compiler and runtime for a small architecture description language.
//!
//! A system description names typed components, typed connectors and the
//! attachments between their ports and roles. This crate parses such
//! descriptions, checks them against a type table and an architectural
//! style, and realizes them as OS processes joined by kernel pipes, an event
//! broker, request/response channels and a cross-site relay.

pub mod checker;
pub mod diag;
pub mod export;
pub mod frame;
pub mod model;
pub mod parser;
pub mod realizer;
pub mod relay;
pub mod span;

pub use diag::{Code, Diagnostic, Severity};
pub use span::{SourceMap, Span};
