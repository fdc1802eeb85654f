//! End-to-end tests of the `memaudit` binary: exit codes, report contents,
//! determinism across reruns and worker counts, and the score / cluster /
//! bench subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use memaudit_core::{random_image, BinaryMask, PixelImage};
use serde_json::{json, Value};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memaudit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn memaudit")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn save_gray(path: &Path, img: &PixelImage) {
    let buf = image::GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Luma([(img.get(x as usize, y as usize) * 255.0).round() as u8])
    });
    buf.save(path).expect("save png");
}

fn save_mask(path: &Path, mask: &BinaryMask) {
    let buf = image::GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([if mask.get(x as usize, y as usize) {
            255
        } else {
            0
        }])
    });
    buf.save(path).expect("save mask png");
}

fn left_half_mask(size: usize) -> BinaryMask {
    let bits = (0..size * size).map(|i| i % size < size / 2).collect();
    BinaryMask::new(size, size, bits).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("read json")).expect("parse json")
}

/// Three 32x32 corpus images with left-half masks; one generation that is a
/// pixel-exact copy of the first corpus image. Returns the manifest path.
fn standard_fixture(dir: &Path, generation_has_mask: bool) -> PathBuf {
    let size = 32;
    let mask = left_half_mask(size);
    save_mask(&dir.join("mask.png"), &mask);
    for i in 0..3u64 {
        save_gray(
            &dir.join(format!("train{i}.png")),
            &random_image(size, size, 100 + i),
        );
    }
    save_gray(&dir.join("gen.png"), &random_image(size, size, 100));

    let mut generation = json!({
        "prompt_id": "p1",
        "generation_index": 0,
        "image": "gen.png",
    });
    if generation_has_mask {
        generation["mask"] = json!("mask.png");
    }
    let manifest = json!({
        "schema_version": 1,
        "corpus": (0..3)
            .map(|i| json!({
                "train_id": format!("t{i}"),
                "image": format!("train{i}.png"),
                "mask": "mask.png",
            }))
            .collect::<Vec<_>>(),
        "generations": [generation],
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

#[test]
fn audit_reports_a_verbatim_copy() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), true);
    let output = run_in(
        dir.path(),
        &["audit", "manifest.json", "--out", "report.json"],
    );
    assert_exit(&output, 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("3 comparisons"), "stdout: {stdout}");

    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["total_comparisons"], 3);
    assert_eq!(report["class_distribution"]["vm"], 1);
    assert_eq!(report["config"]["tau_full"], 0.8);
    assert_eq!(report["config"]["weights"], "equal");
    let record = &report["records"][0];
    assert_eq!(record["best_train_id"], "t0");
    assert_eq!(record["m_full"], 1.0);
    assert_eq!(record["class"], "VM");
    assert_eq!(record["mask_absent"], false);
    assert_eq!(report["prompts"][0]["distinct_match_count"], 1);
    assert!(report["failures"].as_array().unwrap().is_empty());

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "prompt_id,gen_index,best_train_id,m_full,m_fg,m_bg,class"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("p1,0,t0,1.000000,"), "row: {row}");
    assert!(row.ends_with(",VM"), "row: {row}");
    assert_eq!(lines.next(), None);
}

#[test]
fn reruns_and_worker_counts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), true);
    let runs = [
        ("a.json", vec!["--jobs", "1"]),
        ("b.json", vec!["--jobs", "1"]),
        ("c.json", vec!["--jobs", "4"]),
    ];
    for (out, extra) in &runs {
        let mut args = vec!["audit", "manifest.json", "--out", out];
        args.extend(extra.iter().copied());
        assert_exit(&run_in(dir.path(), &args), 0);
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(a, std::fs::read(dir.path().join("c.json")).unwrap());
    let a_csv = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a_csv, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(a_csv, std::fs::read(dir.path().join("c.csv")).unwrap());
}

#[test]
fn missing_mask_collapses_and_serializes_null() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), false);
    let output = run_in(
        dir.path(),
        &["audit", "manifest.json", "--out", "report.json"],
    );
    assert_exit(&output, 0);

    let raw = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(raw.contains("\"m_fg\": null"), "raw: {raw}");
    let report: Value = serde_json::from_str(&raw).unwrap();
    let record = &report["records"][0];
    assert_eq!(record["mask_absent"], true);
    assert!(record["m_fg"].is_null());
    assert!(record["m_bg"].is_null());
    assert_eq!(record["class"], "VM");

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert_eq!(row, "p1,0,t0,1.000000,,,VM");
}

#[test]
fn undecodable_generation_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = standard_fixture(dir.path(), true);
    std::fs::write(dir.path().join("broken.png"), b"this is not a png").unwrap();
    let mut manifest = read_json(&manifest_path);
    manifest["generations"].as_array_mut().unwrap().push(json!({
        "prompt_id": "p2",
        "generation_index": 0,
        "image": "broken.png",
        "mask": "mask.png",
    }));
    std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

    let output = run_in(
        dir.path(),
        &["audit", "manifest.json", "--out", "report.json"],
    );
    assert_exit(&output, 3);
    assert!(String::from_utf8_lossy(&output.stderr).contains("failed"));

    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["records"].as_array().unwrap().len(), 1);
    let failures = report["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["prompt_id"], "p2");
    assert!(failures[0]["error"]
        .as_str()
        .unwrap()
        .contains("broken.png"));
    // The two successful comparisons still count: 1 generation x 3 corpus.
    assert_eq!(report["total_comparisons"], 3);
}

#[test]
fn missing_corpus_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = standard_fixture(dir.path(), true);
    let mut manifest = read_json(&manifest_path);
    manifest["corpus"][1]["image"] = json!("vanished.png");
    std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

    let output = run_in(
        dir.path(),
        &["audit", "manifest.json", "--out", "report.json"],
    );
    assert_exit(&output, 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("vanished.png"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn score_of_identical_runs_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), true);
    assert_exit(
        &run_in(dir.path(), &["audit", "manifest.json", "--out", "a.json"]),
        0,
    );
    assert_exit(
        &run_in(dir.path(), &["audit", "manifest.json", "--out", "b.json"]),
        0,
    );
    let output = run_in(
        dir.path(),
        &["score", "a.json", "b.json", "--out", "summary.json"],
    );
    assert_exit(&output, 0);

    let stdout = String::from_utf8_lossy(&output.stdout);
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["mean_score"], 0.0);
    assert_eq!(summary["pair_count"], 1);
    assert_eq!(summary["matrix"][0][0], 1);
    assert_eq!(summary["classes"][0], "VM");
    assert_eq!(read_json(&dir.path().join("summary.json")), summary);
}

#[test]
fn audit_with_before_embeds_the_mitigation_score() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), true);
    assert_exit(
        &run_in(dir.path(), &["audit", "manifest.json", "--out", "a.json"]),
        0,
    );
    assert_exit(
        &run_in(
            dir.path(),
            &[
                "audit",
                "manifest.json",
                "--out",
                "b.json",
                "--before",
                "a.json",
            ],
        ),
        0,
    );
    let report = read_json(&dir.path().join("b.json"));
    assert_eq!(report["mitigation_score"], 0.0);
    // Without --before the key is omitted entirely.
    let baseline = read_json(&dir.path().join("a.json"));
    assert!(baseline.get("mitigation_score").is_none());
}

#[test]
fn cluster_writes_singleton_plans() {
    let dir = tempfile::tempdir().unwrap();
    let mut embeddings = String::new();
    let mut sets = Vec::new();
    for i in 0..12 {
        embeddings.push_str(&format!("p{i},{}.0,{}.0\n", i * 10, i * 10));
        sets.push(json!({
            "prompt_id": format!("p{i}"),
            "neurons": [i, format!("{i}:7")],
        }));
    }
    std::fs::write(dir.path().join("emb.csv"), embeddings).unwrap();
    std::fs::write(
        dir.path().join("sets.json"),
        serde_json::to_string(&json!({"schema_version": 1, "sets": sets})).unwrap(),
    )
    .unwrap();

    let output = run_in(
        dir.path(),
        &[
            "cluster",
            "emb.csv",
            "sets.json",
            "--alpha-damp",
            "0.25",
            "--out",
            "plan.json",
        ],
    );
    assert_exit(&output, 0);
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["schema_version"], 1);
    let plans = plan["plans"].as_array().unwrap();
    assert_eq!(plans.len(), 12);
    for entry in plans {
        assert_eq!(entry["alpha_damp"], 0.25);
        let members = entry["member_prompts"].as_array().unwrap();
        assert_eq!(members.len(), 1, "k = n yields singleton clusters");
        let prompt = members[0].as_str().unwrap();
        let i: u64 = prompt[1..].parse().unwrap();
        let mut union: Vec<u64> = entry["union_neurons"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect();
        union.sort_unstable();
        // The plain id i plus "i:7" packed as (i << 32) | 7.
        assert_eq!(union, vec![i, (i << 32) | 7]);
    }

    let missing = run_in(dir.path(), &["cluster", "emb.csv", "absent.json"]);
    assert_exit(&missing, 2);
}

#[test]
fn bench_reports_identical_matrices_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(
        dir.path(),
        &[
            "bench",
            "--corpus",
            "4",
            "--image-size",
            "32",
            "--jobs",
            "2",
            "--baseline-jobs",
            "1",
            "--seed",
            "7",
            "--out",
            "bench.json",
        ],
    );
    assert_exit(&output, 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    let timing: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(timing["corpus"], 4);
    assert_eq!(timing["image_size"], 32);
    assert_eq!(timing["jobs"], 2);
    assert!(timing["median_seconds"].as_f64().unwrap() > 0.0);
    assert!(timing["pairs_per_second"].as_f64().unwrap() > 0.0);
    assert_eq!(timing["baseline"]["jobs"], 1);
    assert_eq!(timing["baseline"]["results_identical"], true);
    assert_eq!(read_json(&dir.path().join("bench.json")), timing);
}

#[test]
fn flag_overrides_reach_the_report_config() {
    let dir = tempfile::tempdir().unwrap();
    standard_fixture(dir.path(), true);
    let output = run_in(
        dir.path(),
        &[
            "audit",
            "manifest.json",
            "--tau-full",
            "0.9",
            "--scales",
            "3",
            "--out",
            "report.json",
        ],
    );
    assert_exit(&output, 0);
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["config"]["tau_full"], 0.9);
    assert_eq!(report["config"]["scales"], 3);
    // An exact copy stays verbatim under the stricter threshold.
    assert_eq!(report["records"][0]["class"], "VM");

    let invalid = run_in(
        dir.path(),
        &[
            "audit",
            "manifest.json",
            "--tau-part",
            "0.95",
            "--out",
            "x.json",
        ],
    );
    assert_exit(&invalid, 2);
}
