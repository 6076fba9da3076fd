use std::path::Path;

use tryon::dataset::{build_dataset, validate_dataset, DatasetConfig, DatasetManifest};
use tryon::imaging::{self, SoftMask};
use tryon::perception::{Backends, FailOnFrames, StubDensePose};
use tryon::synthetic::capture_video;
use tryon::video::MemorySource;
use tryon::Error;

fn config() -> DatasetConfig {
    DatasetConfig {
        roi_size: 48,
        ..DatasetConfig::default()
    }
}

fn build(dir: &Path, backends: &Backends) -> tryon::Result<DatasetManifest> {
    let frames = capture_video(30, 3, 96, 128).unwrap();
    let mut src = MemorySource::new(frames, 30.0);
    build_dataset(&mut src, backends, "red-shirt", &config(), dir)
}

#[test]
fn thirty_frames_give_thirty_valid_records() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), &Backends::stub(7)).unwrap();
    assert_eq!(m.records.len(), 30);
    assert_eq!(m.total_frames, 30);
    assert!(m.skipped.is_empty());
    assert_eq!(m.simplification_set, config().simplification_set);
    let ids: Vec<u64> = m.records.iter().map(|r| r.frame_id).collect();
    assert_eq!(ids, (0..30).collect::<Vec<_>>());
    let report = validate_dataset(dir.path()).unwrap();
    assert!(report.ok(), "{report:?}");
    assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
}

#[test]
fn rebuilding_gives_identical_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = build(a.path(), &Backends::stub(7)).unwrap();
    let mb = build(b.path(), &Backends::stub(7)).unwrap();
    assert_eq!(ma.content_hash, mb.content_hash);
    assert_eq!(ma.content_hash.len(), 64);
}

#[test]
fn config_change_changes_hash() {
    let a = tempfile::tempdir().unwrap();
    let ma = build(a.path(), &Backends::stub(7)).unwrap();
    let mut edited = ma.clone();
    edited.config.roi_padding = 0.2;
    assert_ne!(edited.compute_hash(a.path()).unwrap(), ma.content_hash);
}

#[test]
fn injected_failures_are_skipped_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let mut backends = Backends::stub(7);
    backends.densepose = std::sync::Arc::new(FailOnFrames::new(StubDensePose::new(7), [3, 7]));
    let m = build(dir.path(), &backends).unwrap();
    assert_eq!(m.records.len(), 28);
    let skipped: Vec<u64> = m.skipped.iter().map(|s| s.frame_id).collect();
    assert_eq!(skipped, vec![3, 7]);
    assert_eq!(m.records.len() as u64 + m.skipped.len() as u64, m.total_frames);
}

#[test]
fn blank_video_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = MemorySource::new(vec![imaging::Image::zeros(3, 32, 32); 4], 30.0);
    let err = build_dataset(&mut src, &Backends::stub(7), "g", &config(), dir.path()).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn validation_flags_deleted_files_and_soft_masks() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), &Backends::stub(7)).unwrap();
    std::fs::remove_file(dir.path().join(&m.records[4].vm_path)).unwrap();
    let report = validate_dataset(dir.path()).unwrap();
    assert_eq!(report.failed, 1);
    assert_eq!(report.records.iter().find(|r| !r.ok).unwrap().frame_id, 4);
    assert!(!report.hash_matches);

    let side = m.config.roi_size;
    let soft = SoftMask::filled(side, side, 0.5);
    imaging::save_mask_png(&soft, &dir.path().join(&m.records[9].mask_path)).unwrap();
    let report = validate_dataset(dir.path()).unwrap();
    assert_eq!(report.failed, 2);
    let bad = report.records.iter().find(|r| r.frame_id == 9).unwrap();
    assert!(bad.problems.iter().any(|p| p.contains("not binary")), "{bad:?}");
}
