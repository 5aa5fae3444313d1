mod common;

use std::collections::BTreeMap;
use std::path::Path;

use lafcount_core::attribute_map::{synth_scene, AttributeMap, SceneSpec};
use lafcount_core::laf::Grid;
use lafcount_core::pipeline::*;

fn small_config(mode: Mode) -> PipelineConfig {
    PipelineConfig {
        grid: Grid::new(4, 4),
        codebook_size: 6,
        knn: 3,
        mode,
        ..PipelineConfig::default()
    }
}

fn frames(n: usize) -> (MemorySource, Vec<u32>) {
    let counts: Vec<u32> = (0..n).map(|i| (i * 7 % 9) as u32).collect();
    let maps = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            synth_scene(&common::small_scene(c as usize, i as u64))
                .unwrap()
                .0
        })
        .collect();
    (MemorySource(maps), counts)
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn training_never_touches_test_frames() {
    let (inner, counts) = frames(16);
    let source = RecordingSource::new(inner);
    for mode in Mode::ALL {
        source.clear();
        let bundle = train_on(&source, &counts, 0..10, &small_config(mode)).unwrap();
        assert_eq!(source.accessed(), (0..10).collect::<Vec<_>>(), "{mode}");
        source.clear();
        evaluate_on(&source, &counts, 10..16, &bundle).unwrap();
        assert_eq!(source.accessed(), (10..16).collect::<Vec<_>>(), "{mode}");
    }
}

#[test]
fn identical_inputs_give_identical_bundle_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (source, counts) = frames(12);
    for mode in [Mode::Wvlad, Mode::Sppf] {
        let config = small_config(mode);
        let a = dir.path().join(format!("{mode}-a"));
        let b = dir.path().join(format!("{mode}-b"));
        train_on(&source, &counts, 0..8, &config)
            .unwrap()
            .save(&a)
            .unwrap();
        train_on(&source, &counts, 0..8, &config)
            .unwrap()
            .save(&b)
            .unwrap();
        assert_eq!(dir_contents(&a), dir_contents(&b));
    }
}

#[test]
fn loaded_bundles_predict_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (source, counts) = frames(12);
    let mut kernel = small_config(Mode::Wvlad);
    kernel.regressor = RegressorKind::KernelRidge { gamma: Auto::Auto };
    for (name, config) in Mode::ALL
        .map(|m| (m.to_string(), small_config(m)))
        .into_iter()
        .chain([("krr".into(), kernel)])
    {
        let bundle = train_on(&source, &counts, 0..8, &config).unwrap();
        let path = dir.path().join(&name);
        bundle.save(&path).unwrap();
        let loaded = ModelBundle::load(&path).unwrap();
        for map in &source.0 {
            let a = bundle.predict(map).unwrap();
            let b = loaded.predict(map).unwrap();
            assert_eq!(a.raw.to_bits(), b.raw.to_bits(), "{name}");
        }
    }
}

#[test]
fn holistic_regressor_input_is_channel_count() {
    let (source, counts) = frames(3);
    let bundle = train_on(&source, &counts, 0..2, &small_config(Mode::Hf)).unwrap();
    assert_eq!(bundle.regressor.input_dim(), 4);
    assert!(bundle.quantizer.is_none());
    let sppf = train_on(&source, &counts, 0..2, &small_config(Mode::Sppf)).unwrap();
    assert_eq!(sppf.regressor.input_dim(), 16);
}

#[test]
fn mall_settings_are_echoed_in_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (source, counts) = frames(3);
    let config = PipelineConfig::mall();
    let bundle = train_on(&source, &counts, 0..2, &config).unwrap();
    assert_eq!(bundle.config, config);
    bundle.save(dir.path()).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("meta")).unwrap();
    for line in [
        "config.grid=20x20",
        "config.pyramid=2x2",
        "config.codebook_size=100",
        "config.knn=10",
    ] {
        assert!(meta.lines().any(|l| l == line), "{line}");
    }
    assert!(meta
        .lines()
        .any(|l| l == format!("digest={}", config.digest())));
    let loaded = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.config.digest(), config.digest());
}

#[test]
fn exact_fit_on_training_split() {
    // two-channel constant maps; three frames fix a 2-weight affine map exactly
    let maps: Vec<AttributeMap> = [0.1f32, 0.4, 0.7]
        .iter()
        .map(|&q| AttributeMap::constant(8, 8, &[q, 1.0 - q]).unwrap())
        .collect();
    let counts = vec![3, 11, 5];
    let mut config = small_config(Mode::Hf);
    config.lambda = Auto::Value(0.0);
    let source = MemorySource(maps);
    let bundle = train_on(&source, &counts, 0..3, &config).unwrap();
    let eval = evaluate_on(&source, &counts, 0..3, &bundle).unwrap();
    assert!(eval.report.mae < 1e-6, "{}", eval.report);
    assert!(eval
        .predictions
        .iter()
        .all(|p| p.prediction.rounded == p.truth as u64));
}

#[test]
fn synth_dataset_is_deterministic_and_rejects_single_frame_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthDatasetSpec::desk(6, (2, 6), 4, 11);
    spec.template = SceneSpec {
        count: 0,
        seed: 0,
        ..common::small_scene(0, 0)
    };
    let a = synth_dataset(&spec, dir.path().join("a")).unwrap();
    let b = synth_dataset(&spec, dir.path().join("b")).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(
        dir_contents(&dir.path().join("a")),
        dir_contents(&dir.path().join("b"))
    );
    let loaded = DatasetManifest::load(dir.path().join("a").join(MANIFEST_NAME)).unwrap();
    assert_eq!(loaded.split().unwrap(), 4);
    assert!(loaded.counts().all(|c| (2..=6).contains(&c)));

    spec.frames = 1;
    spec.split = 1;
    let err = synth_dataset(&spec, dir.path().join("one")).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::InvalidSplit {
            split: 1,
            frames: 1
        }
    ));
    assert!(dir.path().join("one/frame_00000.dafm").is_file());
}

#[test]
fn predictions_cover_exactly_the_test_frames() {
    let spec = SynthDatasetSpec {
        template: SceneSpec {
            height: 12,
            width: 12,
            blob_radius: 0.8,
            ..common::small_scene(0, 0)
        },
        frames: 2000,
        counts: (0, 4),
        clutter: (0.0, 0.1),
        seed: 5,
        split: 800,
    };
    let (maps, counts) = synth_frames(&spec).unwrap();
    let source = MemorySource(maps);
    let bundle = train_on(&source, &counts, 0..800, &small_config(Mode::Hf)).unwrap();
    let eval = evaluate_on(&source, &counts, 800..2000, &bundle).unwrap();
    assert_eq!(eval.report.frames, 1200);
    let indices: Vec<usize> = eval.predictions.iter().map(|p| p.index).collect();
    assert_eq!(indices, (800..2000).collect::<Vec<_>>());
    let csv = eval.csv();
    assert_eq!(csv.lines().count(), 1201);
    assert!(csv.lines().nth(1).unwrap().starts_with("800,"));
    assert!(csv.lines().last().unwrap().starts_with("1999,"));
}

#[test]
fn manifest_driven_run_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthDatasetSpec::desk(10, (1, 5), 7, 2);
    spec.template = common::small_scene(0, 0);
    let manifest = synth_dataset(&spec, dir.path()).unwrap();
    let (maps, counts) = synth_frames(&spec).unwrap();
    let config = small_config(Mode::Wvlad);
    let from_disk = train(&manifest, &config).unwrap();
    let in_memory = train_on(&MemorySource(maps), &counts, 0..7, &config).unwrap();
    let a = evaluate(&manifest, &from_disk).unwrap();
    let b = evaluate(&manifest, &in_memory).unwrap();
    assert_eq!(a, b);
    let cmp = compare_baselines(&manifest, &small_config(Mode::Wvlad), Some([7, 8, 9])).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    println!("{cmp}");
}

#[test]
fn scene_roi_restricts_frames() {
    use lafcount_core::attribute_map::RoiMask;
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthDatasetSpec::desk(8, (1, 5), 6, 3);
    spec.template = common::small_scene(0, 0);
    let mut manifest = synth_dataset(&spec, dir.path()).unwrap();
    let inside: Vec<bool> = (0..40 * 40).map(|i| i % 40 < 20).collect();
    RoiMask::new(40, 40, inside)
        .unwrap()
        .store(dir.path().join("roi.pgm"))
        .unwrap();
    manifest.scene_roi = Some("roi.pgm".into());
    manifest.store(dir.path().join("with_roi.csv")).unwrap();
    let manifest = DatasetManifest::load(dir.path().join("with_roi.csv")).unwrap();
    let source = ManifestSource::new(&manifest);
    let map = source.load(0).unwrap();
    assert!(map.pixel(0, 30).iter().all(|&v| v == 0.0));
    assert!(map.pixel(0, 5).iter().sum::<f32>() > 0.99);
}

#[test]
fn similarity_frames_prefer_equal_count_pair() {
    let counts = [5, 9, 30, 19, 30, 12];
    assert_eq!(pick_similarity_frames(&counts, 2..6).unwrap(), [5, 2, 4]);
    assert!(pick_similarity_frames(&counts, 4..6).is_err());
}
