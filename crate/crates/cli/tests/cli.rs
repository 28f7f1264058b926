//! End-to-end runs of the `ecdbs` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ecdbs::hsi_io::{
    band_entropy, difference_image, extract_patches, read_change_map, read_csv_report, read_cube,
    read_labels, split, SplitSpec,
};
use ecdbs::network::read_checkpoint;
use ecdbs::train_eval::evaluate;

const SMALL_SCENE: [&str; 4] = [
    "synth.bands=16",
    "synth.height=20",
    "synth.width=20",
    "synth.groups=4",
];

fn ecdbs(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecdbs"));
    cmd.args(args)
        .env("RUST_LOG", "warn")
        .env("ECDBS_THREADS", "1");
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> String {
    assert_eq!(
        code(&out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data_sets(dir: &Path) -> Vec<String> {
    vec![
        format!("data.t1={}", p(&dir.join("t1.hsic"))),
        format!("data.t2={}", p(&dir.join("t2.hsic"))),
        format!("data.labels={}", p(&dir.join("labels.hsil"))),
    ]
}

fn synth_small(dir: &Path) {
    ok(ecdbs(&["synth", "--out", p(dir)], &SMALL_SCENE));
}

/// Settings for a quick training run on the small scene.
fn quick_train(dir: &Path) -> Vec<String> {
    let mut sets = data_sets(dir);
    sets.extend(
        [
            "bands.clusters=4",
            "network.hidden=16",
            "split.train_fraction=0.3",
            "split.val_fraction=0.2",
            "train.epochs=3",
            "train.batch_size=32",
        ]
        .map(String::from),
    );
    sets
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn synth_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_small(a.path());
    synth_small(b.path());
    for f in [
        "t1.hsic",
        "t2.hsic",
        "labels.hsil",
        "ground_truth_bands.csv",
        "effective_config.json",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        if f != "effective_config.json" {
            assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
        }
    }
    let t1 = read_cube(a.path().join("t1.hsic")).unwrap();
    let t2 = read_cube(a.path().join("t2.hsic")).unwrap();
    let labels = read_labels(a.path().join("labels.hsil")).unwrap();
    assert_eq!(t1.dims(), [16, 20, 20]);
    assert_eq!(t1.dims(), t2.dims());
    assert_eq!((labels.height(), labels.width()), (20, 20));
    let gt = read_csv_report(a.path().join("ground_truth_bands.csv")).unwrap();
    assert_eq!(gt.rows.len(), 16);
}

#[test]
fn effective_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_small(a.path());
    let cfg = a.path().join("effective_config.json");
    ok(ecdbs(
        &["synth", "--config", p(&cfg), "--out", p(b.path())],
        &[],
    ));
    assert_eq!(
        fs::read(a.path().join("t2.hsic")).unwrap(),
        fs::read(b.path().join("t2.hsic")).unwrap()
    );
}

#[test]
fn out_of_range_change_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecdbs(
        &["synth", "--out", p(dir.path())],
        &["synth.change_fraction=0.6"],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_flags_and_unknown_fields_are_usage_errors() {
    assert_eq!(code(&ecdbs(&["frobnicate"], &[])), 1);
    assert_eq!(code(&ecdbs(&["synth", "--seed", "x"], &[])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&ecdbs(
            &["synth", "--out", p(dir.path())],
            &["synth.nope=1"]
        )),
        1
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&ecdbs(&["synth", "--config", p(&cfg)], &[])), 1);
}

#[test]
fn missing_labels_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let sets = data_sets(dir.path());
    let out = ecdbs(&["train", "--out", p(dir.path())], &refs(&sets[..2]));
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.labels"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn corrupt_checkpoint_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let ckpt = dir.path().join("bad.ecdb");
    fs::write(&ckpt, b"NOPE\x01\x00rest-of-file").unwrap();
    let sets = data_sets(dir.path());
    for cmd in ["predict", "evaluate", "select-bands"] {
        let out = ecdbs(
            &[cmd, "--out", p(dir.path()), "--checkpoint", p(&ckpt)],
            &refs(&sets),
        );
        assert_eq!(code(&out), 2, "{cmd}");
    }
}

#[test]
fn mismatched_cubes_are_data_errors() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_small(a.path());
    ok(ecdbs(
        &["synth", "--out", p(b.path())],
        &[
            "synth.bands=12",
            "synth.height=20",
            "synth.width=20",
            "synth.groups=4",
        ],
    ));
    let t1 = format!("data.t1={}", p(&a.path().join("t1.hsic")));
    let t2 = format!("data.t2={}", p(&b.path().join("t2.hsic")));
    let out = ecdbs(&["select-bands", "--out", p(a.path())], &[&t1, &t2]);
    assert_eq!(code(&out), 2);
}

#[test]
fn downsample_rate_sets_cluster_count() {
    let dir = tempfile::tempdir().unwrap();
    ok(ecdbs(
        &["synth", "--out", p(dir.path())],
        &[
            "synth.bands=198",
            "synth.height=12",
            "synth.width=12",
            "synth.groups=8",
        ],
    ));
    let sets = data_sets(dir.path());
    let max_cluster = |extra: &[&str]| {
        let mut s = refs(&sets);
        s.extend_from_slice(extra);
        let stdout = ok(ecdbs(&["select-bands", "--out", p(dir.path())], &s));
        let report = read_csv_report(dir.path().join("bands.csv")).unwrap();
        assert_eq!(report.rows.len(), 198);
        let clusters = report.floats("cluster").unwrap();
        (
            clusters.iter().fold(0.0f64, |a, &c| a.max(c)) as usize + 1,
            stdout,
        )
    };
    let (b, stdout) = max_cluster(&[]);
    assert_eq!(b, 13);
    assert!(stdout.contains("13 clusters"), "{stdout}");
    assert_eq!(max_cluster(&["bands.clusters=12"]).0, 12);
    assert_eq!(max_cluster(&["bands.downsample_rate=20"]).0, 10);
    let mut s = refs(&sets);
    s.extend_from_slice(&["bands.clusters=12", "bands.downsample_rate=16"]);
    assert_eq!(
        code(&ecdbs(&["select-bands", "--out", p(dir.path())], &s)),
        1
    );

    // training reports the same count
    let mut s = refs(&sets);
    s.extend_from_slice(&[
        "train.epochs=1",
        "split.train_fraction=0.3",
        "network.hidden=8",
    ]);
    let stdout = ok(ecdbs(&["train", "--out", p(dir.path())], &s));
    assert!(stdout.contains("198 bands, 13 clusters"), "{stdout}");
}

#[test]
fn train_select_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let sets = quick_train(d);
    let stdout = ok(ecdbs(&["train", "--out", p(d)], &refs(&sets)));
    assert!(stdout.contains("validation"), "{stdout}");
    for f in ["model.ecdb", "training_log.csv", "weight_trajectory.csv"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let log = read_csv_report(d.join("training_log.csv")).unwrap();
    assert_eq!(log.rows.len(), 3);
    assert_eq!(log.header.len(), 5 + 16);
    let traj = read_csv_report(d.join("weight_trajectory.csv")).unwrap();
    assert_eq!(traj.header.len(), 3 + 4);

    // band report with the trained checkpoint
    let ckpt = d.join("model.ecdb");
    ok(ecdbs(
        &["select-bands", "--out", p(d), "--checkpoint", p(&ckpt)],
        &refs(&sets),
    ));
    let bands = read_csv_report(d.join("bands.csv")).unwrap();
    assert_eq!(bands.rows.len(), 16);
    let cluster = bands.floats("cluster").unwrap();
    let selected = bands.floats("selected").unwrap();
    assert_eq!(selected.iter().sum::<f64>(), 4.0);
    for c in 0..4 {
        let picked = (0..16)
            .filter(|&j| cluster[j] == c as f64 && selected[j] == 1.0)
            .count();
        assert_eq!(picked, 1, "cluster {c}");
    }
    let t1 = read_cube(d.join("t1.hsic")).unwrap();
    let t2 = read_cube(d.join("t2.hsic")).unwrap();
    let diff = difference_image(&t1, &t2).unwrap();
    let entropy = bands.floats("entropy").unwrap();
    assert_eq!(entropy, band_entropy(&diff));
    let picks = read_csv_report(d.join("selected_bands.csv")).unwrap();
    assert_eq!(picks.rows.len(), 4);

    // evaluation agrees with the library on the same split
    ok(ecdbs(&["evaluate", "--out", p(d)], &refs(&sets)));
    let metrics = read_csv_report(d.join("metrics.csv")).unwrap();
    let value = |name: &str| -> f64 {
        let row = metrics.rows.iter().find(|r| r[0] == name).unwrap();
        row[1].parse().unwrap()
    };
    let model = read_checkpoint::<f32>(&ckpt).unwrap();
    let labels = read_labels(d.join("labels.hsil")).unwrap();
    let patches = extract_patches(&diff, &labels, 5).unwrap();
    let sp = split(
        &patches,
        &SplitSpec {
            train_fraction: 0.3,
            val_fraction: 0.2,
            seed: 0,
        },
    )
    .unwrap();
    let ev = evaluate(&model, &patches, &sp.test).unwrap();
    assert!((value("oa") - ev.report.oa).abs() <= 1e-12);
    assert!((value("kappa") - ev.report.kappa).abs() <= 1e-12);
    assert!((value("f1") - ev.report.f1).abs() <= 1e-12);
    assert_eq!(value("tp") as u64, ev.confusion.tp);
    assert!(d.join("metrics.txt").is_file());

    // full map, then a map of an unchanged scene
    ok(ecdbs(&["predict", "--out", p(d)], &refs(&sets)));
    let (h, w, map) = read_change_map(d.join("change_map.pgm")).unwrap();
    assert_eq!((h, w, map.len()), (20, 20, 400));
    let zero = tempfile::tempdir().unwrap();
    let same = [sets[0].clone(), sets[0].replace("data.t1", "data.t2")];
    ok(ecdbs(
        &["predict", "--out", p(zero.path()), "--checkpoint", p(&ckpt)],
        &refs(&same),
    ));
    let (_, _, map) = read_change_map(zero.path().join("change_map.pgm")).unwrap();
    assert!(map.iter().all(|&v| v == map[0]));

    // a checkpoint trained on 16 bands does not fit a 12-band cube
    let other = tempfile::tempdir().unwrap();
    ok(ecdbs(
        &["synth", "--out", p(other.path())],
        &[
            "synth.bands=12",
            "synth.height=20",
            "synth.width=20",
            "synth.groups=4",
        ],
    ));
    let out = ecdbs(
        &[
            "predict",
            "--out",
            p(other.path()),
            "--checkpoint",
            p(&ckpt),
        ],
        &refs(&data_sets(other.path())[..2]),
    );
    assert_eq!(code(&out), 2);
    // nor a configuration that asks for a different b
    let mut s = refs(&sets);
    s.push("bands.clusters=5");
    assert_eq!(code(&ecdbs(&["predict", "--out", p(d)], &s)), 2);
}

#[test]
fn single_class_training_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let mut sets = quick_train(d);
    sets.push("split.train_fraction=0.005".into());
    sets.push("split.val_fraction=0".into());
    let out = ecdbs(&["train", "--out", p(d)], &refs(&sets));
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
