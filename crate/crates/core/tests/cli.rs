use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proada::bench::read_jsonl;

const BIN: &str = env!("CARGO_BIN_EXE_proada");

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn proada(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("PROVIDER_BASE_URL")
        .env_remove("PROVIDER_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = proada(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_rules_is_a_usage_error() {
    let out = proada(&["minimize", "--pool", "x.jsonl", "--out", "y.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--rules"));
}

#[test]
fn config_errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = proada(&["label", "--dataset", "nope.jsonl", "--rules", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let data = dir.path().join("d.jsonl");
    fs::write(&data, "").unwrap();
    let rules = corpus_dir().join("rules");
    let out = proada(&[
        "bench",
        "run",
        "--dataset",
        p(&data),
        "--rules",
        p(&rules),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to score"));

    let out = proada(&[
        "bench",
        "run",
        "--agent",
        "oracle",
        "--dataset",
        p(&data),
        "--rules",
        p(&rules),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let script = dir.path().join("script.json");
    fs::write(&script, "{not json").unwrap();
    let out = proada(&[
        "bench",
        "run",
        "--mock-script",
        p(&script),
        "--dataset",
        p(&data),
        "--rules",
        p(&rules),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn minimize_keeps_two_of_three_households() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules");
    fs::create_dir(&rules).unwrap();
    for id in ["O1", "O2", "O3"] {
        fs::write(rules.join(format!("{id}.rule")), "return true\n").unwrap();
        fs::write(
            rules.join(format!("{id}.schema.json")),
            format!(r#"{{"opportunity":"{id}","slots":[]}}"#),
        )
        .unwrap();
    }
    // A covers {O1, O2}, B covers {O2, O3}, C covers {O3}
    let pool = dir.path().join("pool.jsonl");
    let line = |opps: &str| {
        format!(r#"{{"household":{{"members":[{{}}],"household":{{}}}},"opportunities":[{opps}]}}"#)
    };
    fs::write(
        &pool,
        [line(r#""O1","O2""#), line(r#""O2","O3""#), line(r#""O3""#)].join("\n"),
    )
    .unwrap();
    let out = dir.path().join("min.jsonl");
    ok(&[
        "minimize",
        "--pool",
        p(&pool),
        "--rules",
        p(&rules),
        "--out",
        p(&out),
    ]);
    let kept = read_jsonl(&out).unwrap();
    assert_eq!(kept.len(), 2);
    // pruning scans (household, opportunity) ascending, so A's O2 pair goes
    // first and B's survives
    assert_eq!(kept[0].opportunities, ["O1"]);
    assert_eq!(kept[1].opportunities, ["O2", "O3"]);
    assert!(kept.iter().all(|r| r.gold.values().all(|&g| g)));
}

#[test]
fn sample_label_and_bench_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let rules = corpus_dir().join("rules");
    let pool = dir.path().join("pool.jsonl");
    ok(&[
        "sample",
        "--rules",
        p(&rules),
        "--n",
        "30",
        "--seed",
        "3",
        "--out",
        p(&pool),
    ]);
    let again = dir.path().join("pool2.jsonl");
    ok(&[
        "sample",
        "--rules",
        p(&rules),
        "--n",
        "30",
        "--seed",
        "3",
        "--out",
        p(&again),
    ]);
    assert_eq!(fs::read(&pool).unwrap(), fs::read(&again).unwrap());

    let representative = dir.path().join("rep.jsonl");
    ok(&[
        "sample",
        "--rules",
        p(&rules),
        "--n",
        "10",
        "--distributions",
        p(&corpus_dir().join("distributions.toml")),
        "--consistency",
        p(&corpus_dir().join("consistency.toml")),
        "--out",
        p(&representative),
    ]);
    assert_eq!(read_jsonl(&representative).unwrap().len(), 10);

    let data = dir.path().join("data.jsonl");
    ok(&[
        "minimize",
        "--pool",
        p(&pool),
        "--rules",
        p(&rules),
        "--out",
        p(&data),
    ]);
    ok(&["label", "--dataset", p(&data), "--rules", p(&rules)]);
    let labeled = read_jsonl(&data).unwrap();
    assert!(!labeled.is_empty() && labeled.len() < 30);

    for agent in ["proada", "direct"] {
        let run = |name: &str| {
            let out = dir.path().join(format!("{agent}-{name}.json"));
            let transcripts = dir.path().join(format!("{agent}-{name}-t"));
            ok(&[
                "bench",
                "run",
                "--agent",
                agent,
                "--provider",
                "mock",
                "--seed",
                "42",
                "--dataset",
                p(&data),
                "--rules",
                p(&rules),
                "--out",
                p(&out),
                "--transcripts",
                p(&transcripts),
                "--parallelism",
                "4",
            ]);
            (fs::read(out).unwrap(), transcripts)
        };
        let (first, t1) = run("a");
        let (second, t2) = run("b");
        assert_eq!(first, second, "{agent} reports differ");
        let mut names: Vec<_> = fs::read_dir(&t1)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), labeled.len());
        for n in names {
            assert_eq!(
                fs::read(t1.join(&n)).unwrap(),
                fs::read(t2.join(&n)).unwrap()
            );
        }
        let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
        assert_eq!(report["metadata"]["agent"], agent);
    }
}

#[test]
fn synth_writes_loadable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let reqs = dir.path().join("reqs");
    fs::create_dir(&reqs).unwrap();
    fs::copy(
        corpus_dir().join("rules/FairFares.txt"),
        reqs.join("FairFares.txt"),
    )
    .unwrap();
    let out = dir.path().join("out");
    let audit = dir.path().join("audit.jsonl");
    ok(&[
        "synth",
        "--requirements",
        p(&reqs),
        "--out",
        p(&out),
        "--audit",
        p(&audit),
    ]);
    let corpus = proada::corpus::Corpus::load_dir(&out).unwrap();
    assert_eq!(corpus.ids().collect::<Vec<_>>(), ["FairFares"]);
    assert!(fs::read_to_string(&audit).unwrap().lines().count() >= 1);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = proada(&["synth", "--requirements", p(&empty), "--out", p(&out)]);
    assert_eq!(out.status.code(), Some(1));
}
