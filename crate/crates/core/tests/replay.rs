use std::path::Path;

use sfmedit_core::io::{read_manifest, read_mask_pgm, read_tensor, write_manifest, write_tensor, ManifestRecord, RecordKind};
use sfmedit_core::memory::FeatureTokenMap;
use sfmedit_core::pipeline::{
    edit_video, replay_edit, EditConfig, PipelineError, Prompts, ToyFeatureBackend, ToyFeatureLayer,
    ToySpec, REPLAY_MASK_DIR,
};

fn spec() -> ToySpec {
    ToySpec {
        feature_layers: vec![ToyFeatureLayer {
            id: "up1.attn1".into(),
            side: 4,
            dim: 8,
        }],
        ..ToySpec::default()
    }
}

/// Writes features for `frames` (source frame index per recorded frame)
/// at every step in `steps`, plus attention for every head.
fn record(dir: &Path, b: &ToyFeatureBackend, frames: &[usize], steps: &[usize]) -> Vec<ManifestRecord> {
    let mut records = Vec::new();
    for (f, &src) in frames.iter().enumerate() {
        for &s in steps {
            let feat = b.features(0, src);
            let path = format!("f{f}_s{s}_feat.eyit");
            write_tensor(dir.join(&path), &[feat.n_tokens(), feat.dim()], feat.tokens()).unwrap();
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
            for head in 0..2 {
                let att = b.attention(0, head, src, s);
                let (h, w) = att.spatial();
                for (kind, rows, data) in [
                    (RecordKind::CrossQ, h * w, att.q()),
                    (RecordKind::CrossK, att.n_words(), att.k()),
                ] {
                    let path = format!("f{f}_s{s}_h{head}_{kind}.eyit");
                    write_tensor(dir.join(&path), &[rows, att.d_k()], data).unwrap();
                    records.push(ManifestRecord {
                        frame: f,
                        step: s,
                        layer: att.layer_id.clone(),
                        head: Some(head),
                        kind,
                        path,
                        h,
                        w,
                    });
                }
            }
        }
    }
    write_manifest(dir, &records).unwrap();
    records
}

fn cfg() -> EditConfig {
    EditConfig {
        steps: 6,
        ..EditConfig::default()
    }
}

#[test]
fn single_frame_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let b = ToyFeatureBackend::new(spec());
    record(dir.path(), &b, &[0], &[0, 1, 2, 3]);
    let out = replay_edit(dir.path(), &cfg(), None).unwrap();
    assert_eq!(out.features.len(), 1);
    assert_eq!(out.features[0][0], b.features(0, 0));
    assert_eq!(out.report.frames[0].replacement_rate["up1.attn1"], 0.0);
    assert!(out.masks[0].as_ref().is_some_and(|m| !m.is_empty()));
}

#[test]
fn duplicated_frame_copies_stored_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let b = ToyFeatureBackend::new(spec());
    record(dir.path(), &b, &[3, 3], &[0, 3]);
    let out = replay_edit(dir.path(), &cfg(), None).unwrap();
    let stored: &FeatureTokenMap = &out.features[0][0];
    let copied = &out.features[1][0];
    assert_eq!(copied.frame_index(), 1);
    assert!(copied.tokens().iter().zip(stored.tokens()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(out.report.frames[1].replacement_rate["up1.attn1"], 1.0);
}

#[test]
fn truncated_manifest_names_missing_record() {
    let dir = tempfile::tempdir().unwrap();
    let b = ToyFeatureBackend::new(spec());
    let mut records = record(dir.path(), &b, &[0, 1], &[0, 2]);
    let pos = records
        .iter()
        .position(|r| r.frame == 1 && r.step == 2 && r.kind == RecordKind::SpatialFeatures)
        .unwrap();
    records.remove(pos);
    write_manifest(dir.path(), &records).unwrap();
    let err = replay_edit(dir.path(), &cfg(), None).unwrap_err();
    assert!(
        matches!(&err, PipelineError::MissingRecord { frame: 1, step: 2, layer, kind } if layer == "up1.attn1" && kind == "spatial_features"),
        "{err}"
    );
    assert!(err.to_string().contains("frame 1, step 2, layer 'up1.attn1'"));

    let mut records = record(dir.path(), &b, &[0, 1], &[0]);
    records.retain(|r| !(r.frame == 0 && r.kind == RecordKind::CrossK && r.head == Some(1)));
    write_manifest(dir.path(), &records).unwrap();
    let err = replay_edit(dir.path(), &cfg(), None).unwrap_err();
    assert!(err.to_string().contains("cross_k (head 1)"), "{err}");
}

#[test]
fn corrupt_tensor_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let b = ToyFeatureBackend::new(spec());
    record(dir.path(), &b, &[0, 1], &[0]);
    std::fs::write(dir.path().join("f1_s0_feat.eyit"), b"EYIT\x09\x00").unwrap();
    let err = replay_edit(dir.path(), &cfg(), None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("frame 1") && msg.contains("f1_s0_feat.eyit"), "{msg}");
}

#[test]
fn writes_features_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let b = ToyFeatureBackend::new(spec());
    record(dir.path(), &b, &[0, 1, 2], &[0, 3]);
    let out = replay_edit(dir.path(), &cfg(), Some(out_dir.path())).unwrap();
    let m = read_manifest(out_dir.path().join("features")).unwrap();
    assert_eq!(m.records.len(), 3 * 2);
    for r in &m.records {
        let t = read_tensor(m.resolve(r)).unwrap();
        assert_eq!(t.dims, vec![16, 8]);
    }
    for f in 0..3 {
        let mask = read_mask_pgm(out_dir.path().join(REPLAY_MASK_DIR).join(format!("f{f:04}.pgm"))).unwrap();
        assert_eq!(Some(mask), out.masks[f]);
    }
}

#[test]
fn replay_matches_live_memory_and_features() {
    let cfg = cfg();
    let mut b = ToyFeatureBackend::new(spec());
    let video = b.video(7);
    let p = Prompts {
        source: b.source_conditioning(),
        edit: b.edit_conditioning(),
        unconditional: None,
    };
    let live = edit_video(&video, &p, &cfg, &mut b).unwrap();
    let dir = tempfile::tempdir().unwrap();
    record(dir.path(), &b, &(0..7).collect::<Vec<_>>(), &(0..cfg.steps).collect::<Vec<_>>());
    let replayed = replay_edit(dir.path(), &cfg, None).unwrap();
    assert_eq!(live.features, replayed.features);
    let events = |r: &sfmedit_core::pipeline::EditReport| r.eviction_log().cloned().collect::<Vec<_>>();
    assert_eq!(events(&live.report), events(&replayed.report));
    assert_eq!(live.report.storage.retained_per_layer, replayed.report.storage.retained_per_layer);
}
