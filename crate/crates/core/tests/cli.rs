use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use episode_forge::dpp::{check_sampler, LEnsemble};
use episode_forge::episodes::ClassLabel;
use episode_forge::rng::stream;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_episode-forge"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn diversity_csv_has_one_row_per_sampler() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "diversity",
        "--synth",
        "50,16,1.0,0.1",
        "--samplers",
        "uniform,ndt,ndb,ndtb,sbu,sdpp",
        "--out",
        path(dir.path()),
    ]);
    let csv = fs::read_to_string(dir.path().join("diversity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sampler,od_normalized");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[1], "uniform,1");
    let json: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("diversity.json")).unwrap()).unwrap();
    assert_eq!(json["manifest"], "manifest.conf");
    let manifest = fs::read_to_string(dir.path().join("manifest.conf")).unwrap();
    assert!(manifest.contains("outputs = diversity.csv,diversity.json"));
}

#[test]
fn missing_world_is_a_one_line_usage_error() {
    let o = run(&["diversity"]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: ") && err.contains("usage"), "{err}");

    let o = run(&["diversity", "--synth", "50,16"]);
    assert!(!o.status.success());
    let o = run(&["sample", "--no-such-flag"]);
    assert!(!o.status.success());
    assert_eq!(String::from_utf8(o.stderr).unwrap().lines().count(), 1);
}

#[test]
fn ndt_repeats_one_class_set() {
    let lines = jsonl(&ok(&["sample", "--sampler", "ndt", "--count", "3", "--meta-batch-size", "2"]));
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l["classes"] == lines[0]["classes"]));
}

#[test]
fn episode_lines_follow_the_schema() {
    let lines = jsonl(&ok(&["sample", "--n-way", "3", "--k-shot", "2", "--q-queries", "4"]));
    assert_eq!(lines.len(), 4);
    for l in &lines {
        let obj = l.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["classes", "query", "support", "task_id"]);
        assert!(l["task_id"].is_u64());
        assert_eq!(l["classes"].as_array().unwrap().len(), 3);
        assert_eq!(l["support"].as_array().unwrap().len(), 6);
        assert_eq!(l["query"].as_array().unwrap().len(), 12);
        for ex in l["support"].as_array().unwrap() {
            assert_eq!(ex["x"].as_array().unwrap().len(), 16);
            assert!(ex["y"].as_u64().unwrap() < 3);
        }
    }
}

#[test]
fn seeds_change_uniform_draws() {
    // Two 5-way draws from 50 classes share a class set with probability
    // 1 / C(50, 5), about 5e-7.
    let a = jsonl(&ok(&["sample", "--seed", "1"]));
    let b = jsonl(&ok(&["sample", "--seed", "2"]));
    let set = |v: &Value| {
        let mut c: Vec<String> = v["classes"].as_array().unwrap().iter().map(|x| x.to_string()).collect();
        c.sort();
        c
    };
    assert_ne!(set(&a[0]), set(&b[0]));
}

#[test]
fn regression_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "train-regression",
        "--learner",
        "reptile",
        "--family",
        "sinusoid",
        "--shots",
        "5",
        "--epochs",
        "1",
        "--batches-per-epoch",
        "5",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.trim().contains(" ± "), "{out}");
    let per_task = fs::read_to_string(dir.path().join("per_task.csv")).unwrap();
    assert_eq!(per_task.lines().next(), Some("task_index,metric"));
    assert_eq!(per_task.lines().count(), 1025);
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,mean_metric"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["manifest"], "manifest.conf");
    assert_eq!(summary["metric"], "mse");
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&[
        "train-regression",
        "--learner",
        "maml",
        "--epochs",
        "1",
        "--batches-per-epoch",
        "4",
        "--eval-pool",
        "16",
        "--seed",
        "5",
        "--out",
        path(&first),
    ]);
    let manifest = first.join("manifest.conf");
    let second = dir.path().join("second");
    ok(&["train-regression", "--config", path(&manifest), "--out", path(&second)]);
    for f in ["per_task.csv", "curve.csv", "summary.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "sampler = ndt\ncount = 2\nmeta_batch_size = 1\n").unwrap();
    let lines = jsonl(&ok(&["sample", "--config", path(&conf), "--count", "3"]));
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["classes"] == lines[0]["classes"]));

    fs::write(&conf, "sede = 3\n").unwrap();
    assert!(!run(&["sample", "--config", path(&conf)]).status.success());
}

#[test]
fn protonet_learns_a_separated_world() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "train-protonet",
        "--synth",
        "40,8,3,0.3",
        "--epochs",
        "1",
        "--batches-per-epoch",
        "30",
        "--eval-pool",
        "200",
        "--out",
        path(dir.path()),
    ]);
    let mean: f64 = out.split(" ± ").next().unwrap().trim().parse().unwrap();
    assert!(mean > 0.9, "{out}");
}

#[test]
fn ohtm_and_ddpp_log_their_phases() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--epochs", "1", "--batches-per-epoch", "3", "--eval-pool", "8"];
    let o = run(&[&["train-protonet", "--sampler", "ohtm", "--out", path(dir.path())][..], &common].concat());
    assert!(o.status.success());
    let log = fs::read_to_string(dir.path().join("events.log")).unwrap();
    assert!(log.contains("ohtm buffer holds 64 tasks"), "{log}");
    assert!(String::from_utf8(o.stderr).unwrap().contains("hard-task mining on"));

    let o = run(&[&["train-protonet", "--sampler", "ddpp", "--out", path(dir.path())][..], &common].concat());
    assert!(o.status.success());
    let log = fs::read_to_string(dir.path().join("events.log")).unwrap();
    assert!(log.contains("batches 0-499: ddpp uniform warm-up"), "{log}");
}

#[test]
fn dpp_check_identity_passes() {
    let out = ok(&["dpp-check", "--identity", "4", "--k", "2", "--draws", "60000"]);
    assert!(out.contains("chi_square=") && out.contains("p_value="));
    assert!(out.trim_end().ends_with("result=pass"), "{out}");
    assert!(!run(&["dpp-check", "--identity", "9"]).status.success());
    assert!(!run(&["dpp-check", "--identity", "5", "--k", "4"]).status.success());
}

#[test]
fn dpp_check_never_pairs_near_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("e.csv");
    fs::write(
        &emb,
        "class_id,e0,e1,e2\na,1,0,0\nb,1,0.0000001,0\nc,0,1,0\nd,0,0,1\n",
    )
    .unwrap();
    let out = ok(&["dpp-check", "--embeddings", path(&emb), "--k", "2", "--draws", "20000"]);
    let pair = out.lines().find(|l| l.starts_with("a+b,")).unwrap();
    assert!(pair.ends_with(",0"), "{pair}");
}

#[test]
fn broken_sampler_fails_the_check() {
    let ids: Vec<ClassLabel> = ["a", "b", "c", "d"].iter().map(|s| ClassLabel::new(s)).collect();
    let l = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
    let e = LEnsemble::from_matrix(l, ids).unwrap();
    let check = check_sampler(&e, 2, 6000, &mut stream(1, "broken", 0), |_, _, _| Ok(vec![0, 1])).unwrap();
    assert!(!check.passed(0.01));
}

#[test]
fn ttest_reads_per_task_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, "task_index,metric\n0,1.0\n1,2.0\n2,3.0\n3,4.5\n").unwrap();
    fs::write(&b, "task_index,metric\n1,1.1\n0,0.2\n2,2.0\n3,3.4\n").unwrap();
    let out = ok(&["ttest", path(&a), path(&b)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "t,p,dof,significant@0.05");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[2], "3");
    assert_eq!(fields[3], "true");

    fs::write(&b, "task_index,metric\n0,1.0\n").unwrap();
    assert!(!run(&["ttest", path(&a), path(&b)]).status.success());
}
