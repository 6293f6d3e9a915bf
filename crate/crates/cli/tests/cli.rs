use std::path::Path;
use std::process::{Command, Output};

fn styleco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleco")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "views = 4
seeds = 12
preselect_k = 10
latent_k = 8
pslf_max_iters = 100
pslf_restarts = 1
max_iterations = 3
manifest = \"bench/manifest.json\"
truth = \"bench/truth.csv\"
output_dir = \"out\"
cache_dir = \"cache\"
";

fn bench(dir: &Path, extra: &str) {
    let o = styleco(dir, &["synth", "--out", "bench", "--shapes", "8", "--triplets", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(dir.join("run.toml"), format!("{SMALL}{extra}")).unwrap();
}

const CUBE: &str = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";

#[test]
fn render_caches_and_reports_bad_meshes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cube.obj"), CUBE).unwrap();
    std::fs::write(d.join("manifest.json"), r#"{"shapes": [{"id": "cube", "mesh": "cube.obj"}]}"#).unwrap();
    std::fs::write(d.join("run.toml"), "manifest = \"manifest.json\"\noutput_dir = \"out\"\ncache_dir = \"cache\"\n").unwrap();
    let first = styleco(d, &["render", "--config", "run.toml"]);
    assert!(first.status.success());
    assert!(stdout(&first).contains("rendered 1 cached 0"));
    let pgms = std::fs::read_dir(d.join("out/renders/cube")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count();
    assert_eq!(pgms, 12);
    let second = styleco(d, &["render", "--config", "run.toml"]);
    assert!(stdout(&second).contains("rendered 0 cached 1"));

    std::fs::write(d.join("bad.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    std::fs::write(
        d.join("manifest.json"),
        r#"{"shapes": [{"id": "cube", "mesh": "cube.obj"}, {"id": "bad", "mesh": "bad.obj"}, {"id": "gone", "mesh": "gone.obj"}]}"#,
    )
    .unwrap();
    let partial = styleco(d, &["render", "--config", "run.toml"]);
    assert_eq!(partial.status.code(), Some(1));
    let failures = std::fs::read_to_string(d.join("out/failures.csv")).unwrap();
    assert!(failures.contains("bad,") && failures.contains("gone,"));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "etaa = 0.2\n").unwrap();
    assert_eq!(styleco(d, &["render", "--config", "bad.toml"]).status.code(), Some(2));
    std::fs::write(d.join("range.toml"), "eta = 1.5\n").unwrap();
    assert_eq!(styleco(d, &["analyze", "--config", "range.toml"]).status.code(), Some(2));
    assert_eq!(styleco(d, &["analyze", "--config", "missing.toml"]).status.code(), Some(2));
    bench(d, "");
    // labels mode without a constraints file
    assert_eq!(styleco(d, &["analyze", "--config", "run.toml", "--mode", "labels"]).status.code(), Some(2));
    std::fs::write(d.join("tri.toml"), format!("{SMALL}constraints = \"bench/labels.txt\"\n")).unwrap();
    assert_eq!(styleco(d, &["analyze", "--config", "tri.toml", "--mode", "triplets"]).status.code(), Some(2));
}

#[test]
fn analyze_simplify_bestview() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    bench(d, "constraints = \"bench/labels.txt\"\n");
    let a = styleco(d, &["analyze", "--config", "run.toml", "--mode", "labels"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("purity") && stdout(&a).contains("labeled shapes 4"), "{}", stdout(&a));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_labeled"], 4);
    let artifacts = std::fs::read(d.join("out/artifacts.json")).unwrap();

    let again = styleco(d, &["analyze", "--config", "run.toml", "--mode", "labels"]);
    assert!(stdout(&again).contains("up to date"));
    assert_eq!(std::fs::read(d.join("out/artifacts.json")).unwrap(), artifacts);

    let s = styleco(d, &["simplify", "--config", "run.toml", "--reduction", "0.7"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let stats = std::fs::read_to_string(d.join("out/simplified/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 9);
    for row in stats.lines().skip(1) {
        let v: Vec<usize> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(v[1] as f64 <= 0.35 * v[0] as f64, "{row}");
    }
    let z = styleco(d, &["simplify", "--config", "run.toml", "--reduction", "0", "--out", "same"]);
    assert!(z.status.success());
    for row in std::fs::read_to_string(d.join("same/stats.csv")).unwrap().lines().skip(1) {
        let v: Vec<&str> = row.split(',').collect();
        assert_eq!((v[1], v[3]), (v[2], v[4]), "{row}");
    }
    assert_eq!(styleco(d, &["simplify", "--config", "run.toml", "--reduction", "1.5"]).status.code(), Some(2));

    let b1 = styleco(d, &["bestview", "--config", "run.toml", "--out", "bv1.csv"]);
    assert!(b1.status.success(), "{}", String::from_utf8_lossy(&b1.stderr));
    let b2 = styleco(d, &["bestview", "--config", "run.toml", "--out", "bv2.csv", "--jobs", "1"]);
    assert!(b2.status.success());
    let csv = std::fs::read_to_string(d.join("bv1.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(d.join("bv2.csv")).unwrap());
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.lines().skip(1).all(|r| r.split(',').nth(1).unwrap().parse::<usize>().unwrap() < 4));
}

#[test]
fn missing_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    bench(d, "");
    assert_eq!(styleco(d, &["simplify", "--config", "run.toml", "--run-dir", "nowhere"]).status.code(), Some(1));
    assert_eq!(styleco(d, &["bestview", "--config", "run.toml", "--run-dir", "nowhere"]).status.code(), Some(1));
}
