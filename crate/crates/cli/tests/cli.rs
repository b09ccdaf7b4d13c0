use std::path::Path;
use std::process::{Command, Output};

use sfmedit_core::io::{read_mask_pgm, write_manifest, write_mask_pgm, write_tensor, ManifestRecord, RecordKind};
use sfmedit_core::mask::BinaryMask;
use sfmedit_core::pipeline::{ToyFeatureBackend, ToyFeatureLayer, ToySpec};

fn sfmedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfmedit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sfmedit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["simulate", "--frames", "3", "--steps", "6", "--out-dir"];
    ok(&[&args[..], &[p(&a)]].concat());
    ok(&[&args[..], &[p(&b), "--sequential"]].concat());
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(n, _)| n.starts_with("edited")));
    assert!(fa.iter().any(|(n, _)| n == "run.meta"));
    // run.meta records the execution mode, everything else must match
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| n != "run.meta").collect::<Vec<_>>();
    assert_eq!(strip(fa), strip(fb));
}

#[test]
fn metrics_of_identical_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["simulate", "--frames", "2", "--steps", "4", "--out-dir", p(&out)]);
    let edited = out.join("edited");
    let table = ok(&["metrics", p(&edited), p(&edited)]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(&cols[1..3], &["99.0000", "1.0000"], "{row}");
    }
}

#[test]
fn background_columns_with_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["simulate", "--frames", "2", "--steps", "4", "--out-dir", p(&out)]);
    let table = ok(&["metrics", p(&out.join("source")), p(&out.join("edited")), "--masks", p(&out.join("masks"))]);
    assert!(table.lines().next().unwrap().contains("psnr_bg"));
    for row in table.lines().skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(&cols[3..5], &["99.0000", "1.0000"], "{row}");
    }
}

#[test]
fn sfm_trace_documented_sequence() {
    let trace = ok(&["sfm-trace", "--frames", "9", "--sfm-len", "5"]);
    let banks: Vec<&str> = trace.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(banks[6], "0,1,2,5,6");
    assert_eq!(banks[8], "0,1,5,7,8");
}

#[test]
fn sfm_trace_writes_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["sfm-trace", "--frames", "9", "--sfm-len", "5", "--out-dir", p(tmp.path())]);
    let tsv = std::fs::read_to_string(tmp.path().join("trace.tsv")).unwrap();
    assert_eq!(tsv, stdout);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = sfmedit(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_tau_is_single_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sfmedit(&["simulate", "--tau", "2", "--out-dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("2"));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nsteps = 4\nlambda = 0.7\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["simulate", "--config", p(&cfg), "--lambda", "0.6", "--frames", "2", "--out-dir", p(&out)]);
    let meta = std::fs::read_to_string(out.join("run.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "steps = 4"), "{meta}");
    assert!(meta.lines().any(|l| l == "lambda = 0.6"), "{meta}");
    assert!(meta.contains("# command = simulate"));
}

#[test]
fn bad_config_key_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "stepz = 4\n").unwrap();
    let out = sfmedit(&["simulate", "--config", p(&cfg), "--out-dir", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn mask_from_single_hotspot() {
    let tmp = tempfile::tempdir().unwrap();
    let (q, k) = (tmp.path().join("q.eyit"), tmp.path().join("k.eyit"));
    // 4×4 grid, token 5 attends to word 1, the rest to word 0
    let mut qv = Vec::new();
    for t in 0..16 {
        qv.extend_from_slice(if t == 5 { &[0.0f32, 50.0] } else { &[50.0, 0.0] });
    }
    write_tensor(&q, &[16, 2], &qv).unwrap();
    write_tensor(&k, &[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = tmp.path().join("m.pgm");
    ok(&["mask", "--q", p(&q), "--k", p(&k), "--out", p(&out)]);
    let m = read_mask_pgm(&out).unwrap();
    assert_eq!((m.height(), m.width()), (4, 4));
    assert_eq!(m.count(), 1);
    assert!(m.get(1, 1));

    let up = tmp.path().join("up.pgm");
    ok(&["mask", "--q", p(&q), "--k", p(&k), "--upsample", "8", "--out", p(&up)]);
    assert_eq!(read_mask_pgm(&up).unwrap().count(), 4);

    // overlap with a neighbouring pixel fills nothing new but keeps both
    let prev = tmp.path().join("prev.pgm");
    let mut bits = vec![false; 16];
    bits[6] = true;
    write_mask_pgm(&prev, &BinaryMask::new(4, 4, bits).unwrap()).unwrap();
    let ov = tmp.path().join("ov.pgm");
    ok(&["mask", "--q", p(&q), "--k", p(&k), "--prev", p(&prev), "--out", p(&ov)]);
    let m = read_mask_pgm(&ov).unwrap();
    assert!(m.get(1, 1) && m.get(1, 2));
}

#[test]
fn replay_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = tmp.path().join("rec");
    std::fs::create_dir(&rec).unwrap();
    let b = ToyFeatureBackend::new(ToySpec {
        feature_layers: vec![ToyFeatureLayer {
            id: "up1.attn1".into(),
            side: 4,
            dim: 8,
        }],
        ..ToySpec::default()
    });
    let mut records = Vec::new();
    for f in 0..3 {
        for s in 0..3 {
            let feat = b.features(0, f);
            let path = format!("f{f}_s{s}.eyit");
            write_tensor(rec.join(&path), &[feat.n_tokens(), feat.dim()], feat.tokens()).unwrap();
            records.push(ManifestRecord {
                frame: f,
                step: s,
                layer: "up1.attn1".into(),
                head: None,
                kind: RecordKind::SpatialFeatures,
                path,
                h: 4,
                w: 4,
            });
        }
    }
    write_manifest(&rec, &records).unwrap();
    let out = tmp.path().join("out");
    let table = ok(&["replay", p(&rec), "--steps", "6", "--out-dir", p(&out)]);
    assert_eq!(table.lines().count(), 4);
    let meta = std::fs::read_to_string(out.join("run.meta")).unwrap();
    assert!(meta.contains("# command = replay"));
    assert!(out.join("report.jsonl").is_file());
    let features = out.join("features");
    assert!(features.join("manifest.jsonl").is_file());
    assert!(features.join("f0002").join("s002_up1.attn1.eyit").is_file());

    std::fs::remove_file(rec.join("f1_s2.eyit")).unwrap();
    let broken = sfmedit(&["replay", p(&rec), "--steps", "6", "--out-dir", p(&tmp.path().join("o2"))]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("f1_s2.eyit"));
}

#[test]
fn fmp_bench_reports_both_paths() {
    let out = ok(&["fmp-bench", "--side", "4", "--dim", "8", "--repeats", "1"]);
    assert!(out.contains("sequential") && out.contains("parallel"), "{out}");
}
