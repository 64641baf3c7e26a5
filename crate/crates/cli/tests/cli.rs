use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ARCHON: &str = env!("CARGO_BIN_EXE_archon");
const DEMO: &str = env!("CARGO_BIN_EXE_archon-demo");

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/corpus")
}

fn archon(args: &[&str], cwd: &Path) -> Output {
    Command::new(ARCHON)
        .args(args)
        .current_dir(cwd)
        .env_remove("ARCHON_LIB_PATH")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// (file, fmt, check, graph, plan) exit codes.
const GOLDEN: &[(&str, i32, i32, i32, i32)] = &[
    ("bad_layering.arch", 0, 2, 0, 2),
    ("bad_style.arch", 0, 2, 0, 2),
    ("bad_type_mismatch.arch", 0, 2, 0, 2),
    ("bad_unbound_io.arch", 0, 2, 0, 2),
    ("bad_underfilled.arch", 0, 2, 0, 2),
    ("bad_unknown_names.arch", 0, 2, 2, 2),
    ("custom_types.arch", 0, 0, 0, 2),
    ("diamond.arch", 0, 0, 0, 0),
    ("empty.arch", 0, 0, 0, 0),
    ("empty_styled.arch", 0, 0, 0, 0),
    ("events.arch", 0, 0, 0, 0),
    ("events_no_listeners.arch", 0, 0, 0, 0),
    ("explicit_pipes.arch", 0, 0, 0, 0),
    ("fanout.arch", 0, 0, 0, 0),
    ("five_stages.arch", 0, 0, 0, 0),
    ("layered.arch", 0, 0, 0, 0),
    ("process_only.arch", 0, 0, 0, 0),
    ("quoted_impl.arch", 0, 0, 0, 0),
    ("rpc.arch", 0, 0, 0, 0),
    ("rpc_two_sites.arch", 0, 0, 0, 0),
    ("seeded_cycle.arch", 0, 0, 0, 0),
    ("single_stage.arch", 0, 0, 0, 2),
    ("store.arch", 0, 0, 0, 0),
    ("two_pipelines.arch", 0, 0, 0, 0),
    ("upper_rev.arch", 0, 0, 0, 0),
];

#[test]
fn golden_exit_codes() {
    let dir = corpus_dir();
    let mut listed: Vec<&str> = GOLDEN.iter().map(|g| g.0).collect();
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".arch"))
        .collect();
    present.sort();
    assert_eq!(listed, present, "golden table out of date");

    for &(file, fmt, check, graph, plan) in GOLDEN {
        for (sub, want) in [
            ("fmt", fmt),
            ("check", check),
            ("graph", graph),
            ("plan", plan),
        ] {
            let o = archon(&[sub, file], &dir);
            assert_eq!(
                code(&o),
                want,
                "archon {sub} {file}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
    }
}

#[test]
fn check_reports_one_type_mismatch() {
    let o = archon(&["check", "bad_type_mismatch.arch"], &corpus_dir());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.matches("TypeMismatch").count(), 1, "{err}");
    assert!(
        err.starts_with("ERROR TypeMismatch bad_type_mismatch.arch:7:3 "),
        "{err}"
    );
}

#[test]
fn check_json() {
    let o = archon(&["check", "--json", "bad_unbound_io.arch"], &corpus_dir());
    assert_eq!(code(&o), 2);
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    let codes: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["code"].as_str().unwrap())
        .collect();
    assert_eq!(codes, ["UnboundExternalInput", "UnboundExternalOutput"]);
}

#[test]
fn usage_errors() {
    let dir = corpus_dir();
    assert_eq!(code(&archon(&[], &dir)), 64);
    assert_eq!(code(&archon(&["frobnicate", "x.arch"], &dir)), 64);
    assert_eq!(code(&archon(&["check"], &dir)), 64);
    assert_eq!(
        code(&archon(
            &["run", "upper_rev.arch", "--timeout", "soon"],
            &dir
        )),
        64
    );
    assert_eq!(
        code(&archon(&["run", "upper_rev.arch", "--timeout", "-1"], &dir)),
        64
    );
    let help = archon(&["--help"], &dir);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("Usage"));
    assert_eq!(code(&archon(&["--version"], &dir)), 0);
}

#[test]
fn parse_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("broken.arch"),
        "system S { component A : ; }",
    )
    .unwrap();
    let fmt = archon(&["fmt", "broken.arch"], tmp.path());
    assert_eq!(code(&fmt), 1);
    assert!(String::from_utf8_lossy(&fmt.stderr).starts_with("ERROR ParseError broken.arch:1:26 "));
    assert_eq!(code(&archon(&["check", "broken.arch"], tmp.path())), 2);
    assert_eq!(code(&archon(&["fmt", "missing.arch"], tmp.path())), 1);
}

#[test]
fn fmt_is_idempotent() {
    let dir = corpus_dir();
    let tmp = tempfile::tempdir().unwrap();
    for &(file, ..) in GOLDEN {
        let once = archon(&["fmt", file], &dir).stdout;
        let path = tmp.path().join(file);
        std::fs::write(&path, &once).unwrap();
        let twice = archon(&["fmt", path.to_str().unwrap()], &dir).stdout;
        assert_eq!(once, twice, "{file}");
    }
}

#[test]
fn run_upper_rev_matches_shell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::copy(corpus_dir().join("upper_rev.arch"), dir.join("p.arch")).unwrap();
    std::fs::write(dir.join("in.txt"), "hello world\nabc def\n\nlast line").unwrap();
    let o = archon(
        &["run", "p.arch", "--input", "in.txt", "--output", "out.txt"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let oracle = Command::new("sh")
        .arg("-c")
        .arg("tr a-z A-Z < in.txt | rev")
        .current_dir(dir)
        .output()
        .unwrap();
    assert_eq!(std::fs::read(dir.join("out.txt")).unwrap(), oracle.stdout);
}

#[test]
fn run_refuses_rejected_files_without_spawning() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bad.arch"),
        "system S style layered { component M : Process impl \"touch spawned\"; }",
    )
    .unwrap();
    assert_eq!(code(&archon(&["run", "bad.arch"], dir)), 2);
    assert!(!dir.join("spawned").exists());
    std::fs::write(
        dir.join("ok.arch"),
        "system S { component M : Process impl \"touch spawned\"; }",
    )
    .unwrap();
    assert_eq!(code(&archon(&["run", "ok.arch"], dir)), 0);
    assert!(dir.join("spawned").exists());
}

#[test]
fn run_status_and_timeout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("s.arch"),
        "system S { component A : Filter impl \"cat\"; component B : Filter impl \"sh -c 'cat; exit 3'\";
         pipeline p: input | A() | B() | output; input \"in\"; output \"out\"; }",
    )
    .unwrap();
    std::fs::write(dir.join("in"), "x\n").unwrap();
    assert_eq!(code(&archon(&["run", "s.arch"], dir)), 3);

    std::fs::write(
        dir.join("t.arch"),
        "system T { component A : Filter impl \"sleep 30\"; pipeline p: input | A() | output; input \"in\"; output \"out\"; }",
    )
    .unwrap();
    let start = std::time::Instant::now();
    let o = archon(
        &["run", "t.arch", "--timeout", "0.5", "--report", "r.json"],
        dir,
    );
    assert_eq!(code(&o), 124);
    assert!(start.elapsed().as_secs() < 10);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["timed_out"], true);
    assert_eq!(report["processes"][0]["outcome"]["kind"], "timed_out");
}

#[test]
fn emit_plan_and_from_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::copy(corpus_dir().join("upper_rev.arch"), dir.join("p.arch")).unwrap();
    std::fs::write(dir.join("in.txt"), "abc\n").unwrap();
    assert_eq!(
        code(&archon(&["run", "p.arch", "--emit-plan", "plan.json"], dir)),
        0
    );
    assert_eq!(std::fs::read(dir.join("out.txt")).unwrap(), b"CBA\n");
    std::fs::remove_file(dir.join("out.txt")).unwrap();
    assert_eq!(code(&archon(&["run", "--from-plan", "plan.json"], dir)), 0);
    assert_eq!(std::fs::read(dir.join("out.txt")).unwrap(), b"CBA\n");
    let planned = archon(&["plan", "p.arch"], dir).stdout;
    assert_eq!(planned, std::fs::read(dir.join("plan.json")).unwrap());
}

#[test]
fn graph_to_file_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g.dot");
    let o = archon(
        &["graph", "upper_rev.arch", "--out", out.to_str().unwrap()],
        &corpus_dir(),
    );
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let dot = std::fs::read_to_string(&out).unwrap();
    assert!(dot.starts_with("digraph UpperRev {\n"));
    assert!(dot.contains("U -> R [label=main_p1];"));
    let json = archon(&["graph", "--json", "upper_rev.arch"], &corpus_dir());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["style"], "pipes-and-filters");
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);
}

#[test]
fn libraries() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("libs")).unwrap();
    std::fs::write(
        dir.join("libs/audio.archlib"),
        "porttype Audio;\ncomponenttype Mic { port out : Audio; }\n\
         connectortype Cable { role src accepts Audio fill 1..1; role dst accepts Audio fill 1..1; }\n\
         componenttype Speaker { port in : Audio; }\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("clash.archlib"),
        "componenttype Mic { port out : StreamOut; }\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("s.arch"),
        "system Studio { component M : Mic; component S : Speaker; connector c : Cable;
         attach M.out to c.src; attach S.in to c.dst; }",
    )
    .unwrap();
    assert_eq!(code(&archon(&["check", "s.arch"], dir)), 2);
    assert_eq!(
        code(&archon(
            &["check", "--lib", "libs/audio.archlib", "s.arch"],
            dir
        )),
        0
    );

    let found = Command::new(ARCHON)
        .args(["check", "--lib", "audio.archlib", "s.arch"])
        .current_dir(dir)
        .env(
            "ARCHON_LIB_PATH",
            format!("/nonexistent:{}", dir.join("libs").display()),
        )
        .output()
        .unwrap();
    assert_eq!(
        code(&found),
        0,
        "{}",
        String::from_utf8_lossy(&found.stderr)
    );

    let missing = archon(&["check", "--lib", "audio.archlib", "s.arch"], dir);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("LibraryNotFound"));

    let clash = archon(
        &[
            "check",
            "--lib",
            "libs/audio.archlib",
            "--lib",
            "clash.archlib",
            "s.arch",
        ],
        dir,
    );
    assert_eq!(code(&clash), 2);
    assert!(String::from_utf8_lossy(&clash.stderr).contains("DuplicateType"));
}

#[test]
fn style_flag_overrides_declaration() {
    let dir = corpus_dir();
    assert_eq!(code(&archon(&["check", "events.arch"], &dir)), 0);
    assert_eq!(
        code(&archon(
            &["check", "--style", "pipes-and-filters", "events.arch"],
            &dir
        )),
        2
    );
    let unknown = archon(&["check", "--style", "baroque", "events.arch"], &dir);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("UnknownStyle"));
}

fn demo_arch(src: &str, dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, src.replace("archon-demo", DEMO)).unwrap();
    path
}

#[test]
fn rpc_and_events_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("in.txt"), "one\ntwo\nthree\n").unwrap();
    for file in ["rpc.arch", "rpc_two_sites.arch"] {
        let src = std::fs::read_to_string(corpus_dir().join(file)).unwrap();
        demo_arch(&src, dir, file);
        let o = archon(
            &["run", file, "--output", "got.txt", "--timeout", "20"],
            dir,
        );
        assert_eq!(
            code(&o),
            0,
            "{file}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(
            std::fs::read_to_string(dir.join("got.txt")).unwrap(),
            "one\ntwo\nthree\n",
            "{file}"
        );
    }

    demo_arch(
        "system Ev {
           componenttype Ann { port stdin : StreamIn; port stdout : StreamOut; port out : EventEmit; }
           componenttype Lis { port stdin : StreamIn; port stdout : StreamOut; port in : EventRecv; }
           component A : Ann impl \"archon-demo announce --port out --listeners 2\";
           component L1 : Lis impl \"archon-demo listen --port in --count 3\";
           component L2 : Lis impl \"archon-demo listen --port in --count 3\" site \"far\";
           connector e : Event;
           attach A.out to e.announcer; attach L1.in to e.listener; attach L2.in to e.listener;
           pipeline x: input | A() | L2() | output;
           input \"in.txt\"; output \"ev.txt\"; }",
        dir,
        "ev.arch",
    );
    let o = archon(&["run", "ev.arch", "--timeout", "20"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.join("ev.txt")).unwrap(),
        "one\ntwo\nthree\n"
    );
}
