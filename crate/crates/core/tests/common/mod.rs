#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use archon_core::checker::{builtin_styles, check_all, resolve};
use archon_core::model::{builtin_type_table, Architecture, TypeTable};
use archon_core::parser::parse;
use archon_core::realizer::{plan, BuildPlan};

pub fn resolved(src: &str) -> (Architecture, TypeTable) {
    let ast = parse(src).unwrap_or_else(|e| panic!("{e:?}"));
    resolve(&ast, &builtin_type_table()).unwrap_or_else(|d| panic!("{d:?}"))
}

/// Parses, checks and lowers `src`, resolving relative paths against `dir`.
pub fn build(src: &str, dir: &Path) -> BuildPlan {
    let (arch, table) = resolved(src);
    let diags = check_all(&arch, &table, &builtin_styles());
    assert!(diags.iter().all(|d| !d.is_error()), "{diags:?}");
    plan(&arch, &table, &arch.io, dir.to_str().unwrap()).unwrap_or_else(|d| panic!("{d:?}"))
}

/// Runs `script` through `sh -c` with `input` on stdin; the shell oracle.
pub fn shell(script: &str, input: &[u8], dir: &Path) -> Vec<u8> {
    let inp = dir.join("oracle.in");
    std::fs::write(&inp, input).unwrap();
    let out = Command::new("sh")
        .arg("-c")
        .arg(format!("( {script} ) < '{}'", inp.display()))
        .output()
        .unwrap();
    assert!(out.status.success());
    out.stdout
}

pub fn sorted_lines(b: &[u8]) -> Vec<String> {
    let mut v: Vec<String> = String::from_utf8_lossy(b)
        .lines()
        .map(str::to_string)
        .collect();
    v.sort();
    v
}
