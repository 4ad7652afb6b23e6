//! Runs every parser over the checked-in fuzz corpus. Seeds named in `VALID`
//! must parse; the rest only need to return without panicking.

use std::fs;
use std::path::PathBuf;

use gaplab::lab::parse_config;
use gaplab::lyapunov::parse_candidate;
use gaplab::model::parse_model_spec;

const VALID: &[&str] = &[
    "expr/erlang_a_drift",
    "expr/poly",
    "expr/funcs",
    "expr/nested",
    "expr/parens",
    "candidate/poly",
    "candidate/quad",
    "candidate/quad_q",
    "candidate/exp",
    "candidate/expr",
    "model_spec/mm_inf.toml",
    "model_spec/erlang_a_lets.toml",
    "model_spec/zoo_mphn.toml",
    "model_spec/zoo_erlang_a.toml",
    "experiment_config/erlang_a.toml",
    "experiment_config/phase_type.toml",
    "experiment_config/inline_mm_inf.toml",
    "experiment_config/decay.toml",
];

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus")
}

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(corpus().join(target))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let name = format!("{target}/{}", p.file_name().unwrap().to_string_lossy());
            (name, fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn check(name: &str, ok: bool, err: impl std::fmt::Debug) {
    if VALID.contains(&name) {
        assert!(ok, "{name}: {err:?}");
    }
}

#[test]
fn expression_seeds() {
    for (name, data) in seeds("expr") {
        let r = gaplab::expr::parse(&String::from_utf8(data).unwrap());
        check(&name, r.is_ok(), r.err());
    }
}

#[test]
fn candidate_seeds() {
    for (name, data) in seeds("candidate") {
        let (dim, rest) = data.split_first().unwrap();
        let r = parse_candidate(std::str::from_utf8(rest).unwrap(), 1 + *dim as usize % 3);
        check(&name, r.is_ok(), r.err());
    }
}

#[test]
fn model_spec_seeds() {
    for (name, data) in seeds("model_spec") {
        let r = parse_model_spec(&String::from_utf8(data).unwrap());
        if let Ok(m) = &r {
            m.center(100.0).unwrap();
        }
        check(&name, r.is_ok(), r.err());
    }
}

#[test]
fn experiment_config_seeds() {
    for (name, data) in seeds("experiment_config") {
        let r = parse_config(&String::from_utf8(data).unwrap());
        check(&name, r.is_ok(), r.err());
    }
}
