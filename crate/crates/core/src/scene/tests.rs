use super::*;
use crate::format::FormatError;

#[test]
fn generation_is_deterministic() {
    let spec = SceneSpec::desk();
    let a = generate_scene(&spec, 123).unwrap();
    let b = generate_scene(&spec, 123).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.seg, b.seg);
    assert_eq!(a.subseed_bumps, b.subseed_bumps);
    let c = generate_scene(&spec, 124).unwrap();
    assert_ne!(a.seg, c.seg);
}

#[test]
fn single_object_scene_has_two_labels() {
    let mut spec = SceneSpec::desk();
    spec.min_objects = 1;
    spec.max_objects = 1;
    let scene = generate_scene(&spec, 7).unwrap();
    let mut labels: Vec<u32> = scene.seg.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    assert_eq!(labels, vec![0, 1]);
}

/// Independent scanline rasterizer: per-row interval widths in closed form.
fn scanline_count(obj: &PlacedObject, size: usize) -> usize {
    let mut count = 0;
    for py in 0..size {
        let y = py as f64 + 0.5;
        // Closed-form half-width of the shape at height y.
        let half = match obj.kind {
            ShapeKind::Disk => {
                let dy = y - obj.cy;
                if dy.abs() > obj.radius {
                    continue;
                }
                (obj.radius * obj.radius - dy * dy).sqrt()
            }
            ShapeKind::Square => {
                if (y - obj.cy).abs() > obj.radius {
                    continue;
                }
                obj.radius
            }
            ShapeKind::Triangle => {
                let top = obj.cy - obj.radius;
                let bottom = obj.cy + obj.radius / 2.0;
                if y < top || y > bottom {
                    continue;
                }
                (y - top) / 3.0f64.sqrt()
            }
        };
        // Pixel centers x + 0.5 within [cx - half, cx + half].
        let lo = (obj.cx - half - 0.5).ceil().max(0.0) as usize;
        let hi = (obj.cx + half - 0.5).floor().min(size as f64 - 1.0);
        if hi < 0.0 {
            continue;
        }
        let hi = hi as usize;
        if hi >= lo {
            count += hi - lo + 1;
        }
    }
    count
}

#[test]
fn mask_pixel_counts_match_the_scanline_oracle() {
    let mut spec = SceneSpec::desk();
    spec.min_objects = 1;
    spec.max_objects = 1;
    for seed in 0..30 {
        let scene = generate_scene(&spec, seed).unwrap();
        let drawn = scene.seg.labels.iter().filter(|&&l| l == 1).count();
        let oracle = scanline_count(&scene.objects[0], spec.image_size);
        assert_eq!(drawn, oracle, "seed {seed}, object {:?}", scene.objects[0]);
    }
}

#[test]
fn labels_follow_topmost_object() {
    let spec = SceneSpec::desk();
    for seed in [1u64, 2, 3, 4, 5] {
        let scene = generate_scene(&spec, seed).unwrap();
        for y in 0..spec.image_size {
            for x in 0..spec.image_size {
                let mut expected = 0u32;
                for (i, obj) in scene.objects.iter().enumerate() {
                    if obj.covers(x, y) {
                        expected = (i + 1) as u32;
                    }
                }
                assert_eq!(scene.seg.labels[y * spec.image_size + x], expected);
            }
        }
    }
}

#[test]
fn object_counts_cover_the_configured_range() {
    let spec = SceneSpec::desk();
    let mut seen = std::collections::HashSet::new();
    for seed in 0..200 {
        let scene = generate_scene(&spec, seed).unwrap();
        let n = scene.objects.len();
        assert!(
            (spec.min_objects..=spec.max_objects).contains(&n),
            "seed {seed} produced {n} objects"
        );
        seen.insert(n);
    }
    for n in spec.min_objects..=spec.max_objects {
        assert!(seen.contains(&n), "count {n} never produced");
    }
}

#[test]
fn every_object_keeps_its_visible_fraction() {
    let spec = SceneSpec::desk();
    for seed in 0..50 {
        let scene = generate_scene(&spec, seed).unwrap();
        for (i, obj) in scene.objects.iter().enumerate() {
            let full = (0..spec.image_size)
                .flat_map(|y| (0..spec.image_size).map(move |x| (x, y)))
                .filter(|&(x, y)| obj.covers(x, y))
                .count();
            let visible = scene
                .seg
                .labels
                .iter()
                .filter(|&&l| l == (i + 1) as u32)
                .count();
            assert!(
                visible as f64 >= spec.min_visible_fraction * full as f64,
                "seed {seed} object {i}: {visible}/{full}"
            );
        }
    }
}

#[test]
fn image_and_segmentation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::desk(), 9).unwrap();
    let ipath = dir.path().join("0000.img.bin");
    let spath = dir.path().join("0000.seg.bin");
    write_image(&scene.image, &ipath).unwrap();
    write_segmentation(&scene.seg, &spath).unwrap();
    assert_eq!(read_image(&ipath).unwrap(), scene.image);
    assert_eq!(read_segmentation(&spath).unwrap(), scene.seg);
}

#[test]
fn empty_sizes_are_rejected_at_write() {
    let dir = tempfile::tempdir().unwrap();
    let seg = crate::metrics::Segmentation::new(0, 0, vec![]).unwrap();
    match write_segmentation(&seg, &dir.path().join("x.seg.bin")) {
        Err(SceneError::Format(FormatError::InvalidField { .. })) => {}
        other => panic!("expected InvalidField, got {other:?}"),
    }
    let img = crate::image::ImageBuf { width: 0, height: 0, pixels: vec![] };
    assert!(write_image(&img, &dir.path().join("x.img.bin")).is_err());
}

#[test]
fn oversized_labels_are_rejected_at_write() {
    let dir = tempfile::tempdir().unwrap();
    let seg = crate::metrics::Segmentation::new(2, 1, vec![1, 70000]).unwrap();
    assert!(write_segmentation(&seg, &dir.path().join("big.seg.bin")).is_err());
}

#[test]
fn hand_built_segmentation_bytes_decode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.seg.bin");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"SLBS");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for label in [0u16, 1, 2, 1] {
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    std::fs::write(&path, &bytes).unwrap();
    let seg = read_segmentation(&path).unwrap();
    assert_eq!((seg.width, seg.height), (2, 2));
    assert_eq!(seg.labels, vec![0, 1, 2, 1]);
}

#[test]
fn truncated_files_report_the_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.seg.bin");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"SLBS");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&0u16.to_le_bytes()); // 3 labels missing
    std::fs::write(&path, &bytes).unwrap();
    match read_segmentation(&path) {
        Err(SceneError::Format(FormatError::UnexpectedEof { offset })) => {
            assert!(offset >= 16, "offset {offset}")
        }
        other => panic!("expected UnexpectedEof, got {other:?}"),
    }
}

#[test]
fn manifest_scans_pairs_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::desk(), 1).unwrap();
    for stem in ["0002", "0000", "0001"] {
        write_image(&scene.image, &dir.path().join(format!("{stem}.img.bin"))).unwrap();
        write_segmentation(&scene.seg, &dir.path().join(format!("{stem}.seg.bin"))).unwrap();
    }
    let manifest = build_manifest(dir.path(), "synth", 5).unwrap();
    assert_eq!(manifest.count(), 3);
    let images: Vec<&str> = manifest.entries.iter().map(|e| e.image.as_str()).collect();
    assert_eq!(images, ["0000.img.bin", "0001.img.bin", "0002.img.bin"]);

    let path = dir.path().join("manifest.json");
    manifest.save(&path).unwrap();
    assert_eq!(Manifest::load(&path).unwrap(), manifest);
}

#[test]
fn empty_directory_yields_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_manifest(dir.path(), "synth", 5).unwrap();
    assert_eq!(manifest.count(), 0);
}

#[test]
fn orphans_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::desk(), 2).unwrap();
    write_image(&scene.image, &dir.path().join("0000.img.bin")).unwrap();
    match build_manifest(dir.path(), "synth", 5) {
        Err(SceneError::UnpairedFile { stem, missing }) => {
            assert_eq!(stem, "0000");
            assert_eq!(missing, "mask");
        }
        other => panic!("expected UnpairedFile, got {other:?}"),
    }
}

#[test]
fn known_datasets_resolve_slot_counts() {
    assert_eq!(default_slots("COCO"), Some(7));
    assert_eq!(default_slots("MOVi-C"), Some(11));
    assert_eq!(default_slots("ScanNet"), Some(6));
    assert_eq!(default_slots("made-up"), None);
}

#[test]
fn scene_spec_parses_and_validates() {
    let spec = parse_scene_spec(
        "image_size = 48\nmin_objects = 1\nmax_objects = 3\nshapes = disk,square\n\
         background = noise\npalette = ff0000,00ff00\n",
    )
    .unwrap();
    assert_eq!(spec.image_size, 48);
    assert_eq!(spec.shapes, vec![ShapeKind::Disk, ShapeKind::Square]);
    assert_eq!(spec.background, BackgroundMode::Noise);
    assert!((spec.palette[0][0] - 1.0).abs() < 1e-6);

    assert!(parse_scene_spec("min_objects = 0\n").is_err());
    assert!(parse_scene_spec("shapes = hexagon\n").is_err());
    assert!(parse_scene_spec("no_such_key = 1\n").is_err());
}
