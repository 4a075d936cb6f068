use std::path::Path;
use std::process::{Command, Output};

fn dagmig(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagmig"))
        .arg("--state")
        .arg(state)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_migrate_everyone_and_audit_clean() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("lab.json");
    let g = dagmig(&state, &["gen", "--users", "15", "--seed", "4"]);
    assert!(g.status.success(), "{g:?}");
    assert!(stdout(&g).starts_with("miniDiaspora: 15 users"));

    let again = dagmig(&state, &["gen", "--users", "15"]);
    assert_eq!(again.status.code(), Some(2));

    let m = dagmig(
        &state,
        &[
            "migrate",
            "--src",
            "miniDiaspora",
            "--dst",
            "miniMastodon",
            "--all",
            "--json",
        ],
    );
    assert!(m.status.success(), "{m:?}");
    let lines: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    assert_eq!(lines.as_array().unwrap().len(), 15);
    assert!(lines
        .as_array()
        .unwrap()
        .iter()
        .all(|l| l["outcome"] == "committed"));

    let a = dagmig(&state, &["audit", "--strict"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
}

#[test]
fn injected_crash_rolls_back_and_leaves_a_clean_lab() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("lab.json");
    let g = dagmig(&state, &["gen", "--users", "10", "--seed", "1"]);
    assert!(g.status.success());
    let nodes: u64 = stdout(&g)
        .lines()
        .next()
        .unwrap()
        .rsplit(' ')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let m = dagmig(
        &state,
        &[
            "migrate",
            "--src",
            "miniDiaspora",
            "--dst",
            "miniMastodon",
            "--user",
            "1",
            "--fault-inject",
            "wal:17",
        ],
    );
    assert!(m.status.success(), "{m:?}");
    assert!(stdout(&m).contains("rolled_back"), "{}", stdout(&m));
    let a = dagmig(&state, &["audit", "--strict", "--json"]);
    assert_eq!(a.status.code(), Some(0));
    let audit: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let dia = audit["apps"]
        .as_array()
        .unwrap()
        .iter()
        .find(|x| x["app"] == "miniDiaspora")
        .unwrap();
    assert_eq!(dia["total"].as_u64(), Some(nodes));
}

#[test]
fn deriving_from_an_empty_directory_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagmig(
        &dir.path().join("unused.json"),
        &["map", "derive", "--dir", dir.path().to_str().unwrap()],
    );
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn builtin_routes_cover_every_ordered_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagmig(&dir.path().join("unused.json"), &["map", "derive"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 12);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("missing.json");
    assert_eq!(dagmig(&state, &["audit"]).status.code(), Some(2));
    assert_eq!(
        dagmig(&state, &["migrate", "--src", "a"]).status.code(),
        Some(2)
    );
    assert_eq!(dagmig(&state, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bag_entries_can_be_listed_and_taken() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("lab.json");
    assert!(dagmig(&state, &["gen", "--users", "12", "--seed", "3"])
        .status
        .success());
    let m = dagmig(
        &state,
        &[
            "migrate",
            "--src",
            "miniDiaspora",
            "--dst",
            "miniMastodon",
            "--user",
            "3",
        ],
    );
    assert!(m.status.success());
    let l = dagmig(
        &state,
        &["bags", "list", "--app", "miniDiaspora", "--user", "3"],
    );
    let entries: serde_json::Value = serde_json::from_slice(&l.stdout).unwrap();
    let entries = entries.as_array().unwrap();
    assert!(!entries.is_empty(), "no bags after migrating user 3");
    let o = &entries[0]["origin"];
    let origin = format!(
        "{}/{}/{}",
        o["app"].as_str().unwrap(),
        o["node_type"].as_str().unwrap(),
        o["key"]
    );
    let t = dagmig(
        &state,
        &[
            "bags",
            "take",
            "--app",
            "miniDiaspora",
            "--user",
            "3",
            "--origin",
            &origin,
        ],
    );
    assert!(t.status.success(), "{t:?}");
    let l2 = dagmig(
        &state,
        &["bags", "list", "--app", "miniDiaspora", "--user", "3"],
    );
    let after: serde_json::Value = serde_json::from_slice(&l2.stdout).unwrap();
    assert_eq!(after.as_array().unwrap().len(), entries.len() - 1);
}
