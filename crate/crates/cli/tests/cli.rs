use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value};
use trajforge::pipeline::reference_script;
use trajforge::synth::corpus_from_jsonl;

const BIN: &str = env!("CARGO_BIN_EXE_trajforge");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn empty_manifest_gives_empty_graph() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, r#"{"tools": []}"#).unwrap();
    let o = run(&["graph", "--manifest", p(&m), "--out-dir", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "nodes=0 edges=0 entries=0");
    let g: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("graph.json")).unwrap())
            .unwrap();
    assert!(g.is_object());
}

#[test]
fn input_and_config_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["graph", "--manifest", p(&missing)])), 3);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&run(&["graph", "--manifest", p(&bad)])), 3);

    let dup = dir.path().join("dup.json");
    std::fs::write(
        &dup,
        r#"{"tools":[{"name":"get_x","server":"s"},{"name":"get_x","server":"s"}]}"#,
    )
    .unwrap();
    assert_eq!(code(&run(&["graph", "--manifest", p(&dup)])), 4);

    let out = dir.path().join("out");
    assert_eq!(
        code(&run(&["sample", "--per-entry", "0", "--out-dir", p(&out)])),
        2
    );
    assert_eq!(
        code(&run(&["sample", "--depth", "0", "--out-dir", p(&out)])),
        2
    );
    assert_eq!(
        code(&run(&[
            "pipeline",
            "--weights",
            "0.5,0.5,0.5,0",
            "--out-dir",
            p(&out)
        ])),
        2
    );

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"depthh": 2}"#).unwrap();
    assert_ne!(
        code(&run(&[
            "pipeline",
            "--config",
            p(&cfg),
            "--out-dir",
            p(&out)
        ])),
        0
    );

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    assert_eq!(
        code(&run(&["graph", "--endpoint", &dead, "--out-dir", p(&out)])),
        5
    );
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "pipeline",
            "--seed",
            "11",
            "--per-entry",
            "4",
            "--out-dir",
            p(d.path()),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("trajectories="));
    }
    for f in ["trajectories.jsonl", "corpus.jsonl", "report.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn staged_commands_match_the_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let out = p(d.path());
    assert_eq!(code(&run(&["sample", "--seed", "3", "--out-dir", out])), 0);
    assert_eq!(code(&run(&["synth", "--seed", "3", "--out-dir", out])), 0);
    let cands = d.path().join("candidates.jsonl");
    assert_eq!(
        code(&run(&[
            "validate",
            "--seed",
            "3",
            "--out-dir",
            out,
            "--candidates",
            p(&cands)
        ])),
        0
    );
    let staged = std::fs::read(d.path().join("corpus.jsonl")).unwrap();

    let e = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["pipeline", "--seed", "3", "--out-dir", p(e.path())])),
        0
    );
    assert_eq!(
        staged,
        std::fs::read(e.path().join("corpus.jsonl")).unwrap()
    );
}

#[test]
fn nothing_retained_exits_with_empty_corpus() {
    let d = tempfile::tempdir().unwrap();
    let m = d.path().join("m.json");
    std::fs::write(&m, r#"{"tools": []}"#).unwrap();
    let o = run(&["pipeline", "--manifest", p(&m), "--out-dir", p(d.path())]);
    assert_eq!(code(&o), 6, "{}", String::from_utf8_lossy(&o.stderr));
}

fn first_task(dir: &Path) -> (Value, trajforge::TaskCandidate) {
    let o = run(&["pipeline", "--seed", "5", "--out-dir", p(dir)]);
    assert_eq!(code(&o), 0);
    let corpus =
        corpus_from_jsonl(&std::fs::read_to_string(dir.join("corpus.jsonl")).unwrap()).unwrap();
    let task = corpus.into_iter().next().expect("non-empty corpus");
    (json!(task.task_id), task)
}

fn scores(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("scores.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn reference_rollouts_score_perfectly() {
    let d = tempfile::tempdir().unwrap();
    let (id, task) = first_task(d.path());
    let script = d.path().join("script.jsonl");
    std::fs::write(
        &script,
        json!({"task_id": id, "steps": reference_script(&task)}).to_string(),
    )
    .unwrap();
    let corpus = d.path().join("corpus.jsonl");
    let o = run(&[
        "rollout",
        "--seed",
        "5",
        "--group-size",
        "2",
        "--out-dir",
        p(d.path()),
        "--corpus",
        p(&corpus),
        "--scripted",
        p(&script),
    ]);
    assert_eq!(code(&o), 7, "tasks without a script are skipped");
    let s: Vec<Value> = scores(d.path())
        .into_iter()
        .filter(|s| s["task_id"] == id)
        .collect();
    assert_eq!(s.len(), 2);
    for r in &s {
        assert_eq!(r["total"], 1.0);
        assert_eq!(r["advantage"], 0.0);
        assert_eq!(r["match"]["passed"], true);
    }
}

#[test]
fn one_success_in_four_gives_standardized_advantages() {
    let d = tempfile::tempdir().unwrap();
    let (id, task) = first_task(d.path());
    let only = d.path().join("one.jsonl");
    std::fs::write(
        &only,
        format!("{}\n", serde_json::to_string(&task).unwrap()),
    )
    .unwrap();
    let mut lines =
        vec![json!({"task_id": id, "rollout": 0, "steps": reference_script(&task)}).to_string()];
    for g in 1..4 {
        lines.push(json!({"task_id": id, "rollout": g, "steps": ["I give up."]}).to_string());
    }
    let script = d.path().join("script.jsonl");
    std::fs::write(&script, lines.join("\n")).unwrap();
    let o = run(&[
        "rollout",
        "--seed",
        "5",
        "--group-size",
        "4",
        "--out-dir",
        p(d.path()),
        "--corpus",
        p(&only),
        "--scripted",
        p(&script),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = scores(d.path());
    let totals: Vec<f64> = s.iter().map(|r| r["total"].as_f64().unwrap()).collect();
    assert_eq!(totals, vec![1.0, 0.0, 0.0, 0.0]);
    let adv: Vec<f64> = s.iter().map(|r| r["advantage"].as_f64().unwrap()).collect();
    assert!((adv[0] - 1.7321).abs() < 1e-4, "{adv:?}");
    assert!(
        adv[1..].iter().all(|a| (a + 0.5774).abs() < 1e-4),
        "{adv:?}"
    );

    // rescoring the written transcripts reproduces the scores
    let t = d.path().join("transcripts.jsonl");
    let o = run(&[
        "score",
        "--seed",
        "5",
        "--out-dir",
        p(d.path()),
        "--transcripts",
        p(&t),
        "--corpus",
        p(&only),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(scores(d.path()), s);
}

#[test]
fn unreachable_policy_skips_tasks() {
    let d = tempfile::tempdir().unwrap();
    let (_, task) = first_task(d.path());
    let only = d.path().join("one.jsonl");
    std::fs::write(&only, serde_json::to_string(&task).unwrap()).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    let o = run(&[
        "rollout",
        "--out-dir",
        p(d.path()),
        "--corpus",
        p(&only),
        "--policy-endpoint",
        &dead,
    ]);
    assert_eq!(code(&o), 7, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("skipped=1"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server() -> (Server, String) {
    let mut child = Command::new(BIN)
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listen line")
        .to_string();
    (Server(child), addr)
}

#[test]
fn served_tools_match_the_builtin_manifest() {
    let (_server, addr) = start_server();
    let served = run(&["export-manifest", "--endpoint", &addr]);
    assert_eq!(
        code(&served),
        0,
        "{}",
        String::from_utf8_lossy(&served.stderr)
    );
    let local = run(&["export-manifest"]);
    assert_eq!(stdout(&served), stdout(&local));

    let d = tempfile::tempdir().unwrap();
    let a = run(&["graph", "--endpoint", &addr, "--out-dir", p(d.path())]);
    let e = tempfile::tempdir().unwrap();
    let b = run(&["graph", "--out-dir", p(e.path())]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn bind_failure_has_its_own_code() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let taken = holder.local_addr().unwrap().to_string();
    assert_eq!(code(&run(&["serve", "--bind", &taken])), 8);
}

#[test]
fn exec_runs_one_tool() {
    let o = run(&[
        "exec",
        "--tool",
        "crm.create_customer",
        "--args",
        r#"{"customer_name":"Fir"}"#,
    ]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["status"], "success");
    assert!(r["payload"]["customer_id"].is_string());
    assert_eq!(
        code(&run(&[
            "exec",
            "--tool",
            "crm.create_customer",
            "--args",
            "[1]"
        ])),
        2
    );
}
