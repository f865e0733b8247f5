use super::*;
use crate::data::synthetic_shapes;
use crate::error::LcmError;
use crate::nets::toy_arch_templates;
use crate::tensor::Tensor;
use crate::train::{reconstruct, train, TrainConfig, Variant};

fn quantized(dims: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = crate::rng::stream_rng(seed, 42, 0);
    let t = Tensor::<f32>::uniform(dims, 0.0, 1.0, &mut rng).unwrap();
    t.map(|v| (quantize(v) as f64 / 255.0) as f32)
}

#[test]
fn white_png_loads_as_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.png");
    save_image(&Tensor::<f32>::full(&[1, 3, 2, 2], 1.0).unwrap(), &p).unwrap();
    let t = load_image::<f32>(&p, 3, 2, 2).unwrap();
    assert!(t.data().iter().all(|&v| v == 1.0));
}

#[test]
fn half_quantizes_to_128_and_clamps() {
    assert_eq!(quantize(0.5f32), 128);
    assert_eq!(quantize(-0.3f32), 0);
    assert_eq!(quantize(7.0f64), 255);
    assert_eq!(quantize(f32::NAN), 0);
}

#[test]
fn png_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    let mut rng = crate::rng::stream_rng(1, 42, 0);
    let x = Tensor::<f32>::uniform(&[1, 3, 5, 7], 0.0, 1.0, &mut rng).unwrap();
    save_image(&x, &p).unwrap();
    let y = load_image::<f32>(&p, 3, 5, 7).unwrap();
    let drift = x.zip_map(&y, |a, b| (a - b).abs()).unwrap().max_abs();
    assert!(drift <= 0.5 / 255.0 + 1e-6, "{drift}");
    let q = quantized(&[1, 1, 4, 3], 2);
    save_image(&q, &p).unwrap();
    assert_eq!(load_image::<f32>(&p, 1, 4, 3).unwrap(), q);
}

#[test]
fn anisotropic_resize_scales_axes_independently() {
    // Horizontal ramp: after resizing every row is still the same ramp and
    // columns stay constant, so neither axis was cropped.
    let (h, w) = (218, 178);
    let data: Vec<f32> = (0..h * w).map(|i| (i % w) as f32 / (w - 1) as f32).collect();
    let x = Tensor::from_vec(&[1, 1, h, w], data).unwrap();
    let y = resize_bilinear(&x, 128, 128).unwrap();
    assert_eq!(y.dims(), &[1, 1, 128, 128]);
    for r in 1..128 {
        for c in 0..128 {
            assert_eq!(y.at(0, 0, r, c), y.at(0, 0, 0, c));
        }
    }
    assert!(y.at(0, 0, 0, 0) < 0.01 && y.at(0, 0, 0, 127) > 0.99);
    let mid = y.at(0, 0, 0, 64);
    let expected = ((64.5f64 * 178.0 / 128.0 - 0.5) / 177.0) as f32;
    assert!((mid - expected).abs() < 1e-5);
}

#[test]
fn resize_preserves_constants_and_identity() {
    let c = Tensor::<f64>::full(&[1, 3, 5, 9], 0.3).unwrap();
    let r = resize_bilinear(&c, 7, 4).unwrap();
    assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    let q = quantized(&[1, 3, 4, 4], 3).cast::<f64>();
    assert_eq!(resize_bilinear(&q, 4, 4).unwrap(), q);
}

#[test]
fn non_png_and_missing_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert!(load_image::<f32>(&junk, 3, 2, 2).is_err());
    assert!(matches!(
        load_image::<f32>(&dir.path().join("none.png"), 3, 2, 2),
        Err(LcmError::Io { .. })
    ));
    let p16 = dir.path().join("deep.png");
    ::image::ImageBuffer::<::image::Luma<u16>, _>::from_raw(2, 2, vec![0u16, 1, 2, 3])
        .unwrap()
        .save(&p16)
        .unwrap();
    assert!(matches!(
        load_image::<f32>(&p16, 1, 2, 2),
        Err(LcmError::UnsupportedFormat { .. })
    ));
}

#[test]
fn manifest_validation_and_hash() {
    let e = |id: &str| ManifestEntry {
        id: id.into(),
        path: format!("{id}.png").into(),
        shape: [3, 8, 8],
    };
    assert!(DatasetManifest::new("imgs", vec![e("a"), e("a")]).is_err());
    let m = DatasetManifest::new("imgs", vec![e("a"), e("b")]).unwrap();
    let swapped = DatasetManifest::new("imgs", vec![e("b"), e("a")]).unwrap();
    assert_ne!(m.hash(), swapped.hash());
    assert_eq!(m.hash().len(), 64);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    m.save(&p).unwrap();
    assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    std::fs::write(&p, m.to_json().replace("\"resize\"", "\"extra\": 1, \"resize\"")).unwrap();
    assert!(DatasetManifest::load(&p).is_err());
}

#[test]
fn manifest_loads_dataset_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let a = quantized(&[1, 3, 4, 4], 5);
    let b = quantized(&[1, 3, 4, 4], 6);
    save_image(&a, &dir.path().join("a.png")).unwrap();
    save_image(&b, &dir.path().join("b.png")).unwrap();
    let entries = ["b", "a"]
        .iter()
        .map(|id| ManifestEntry {
            id: id.to_string(),
            path: format!("{id}.png").into(),
            shape: [3, 4, 4],
        })
        .collect();
    let m = DatasetManifest::new(".", entries).unwrap();
    let mp = dir.path().join("m.json");
    m.save(&mp).unwrap();
    let ds = m.load_dataset::<f32>(&m.resolved_root(&mp)).unwrap();
    assert_eq!(ds.ids, vec!["b", "a"]);
    assert_eq!(ds.images[0], b);
    assert_eq!(ds.images[1], a);
}

fn trained(variant: Variant) -> (crate::train::TrainState<f32>, TrainConfig, Vec<String>) {
    let (lat, gen) = toy_arch_templates("tiny16").unwrap();
    let ds = synthetic_shapes::<f32>(3, 16, 1).unwrap();
    let cfg = TrainConfig {
        max_steps: Some(3),
        batch_size: 2,
        ..TrainConfig::default()
    };
    (train(&ds, &cfg, variant, Some(&lat), &gen).unwrap(), cfg, ds.ids)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for variant in [Variant::Lcm, Variant::GloMap, Variant::GloVector(5)] {
        let (st, cfg, ids) = trained(variant);
        let ck = Checkpoint::from_state(&st, &cfg, &ids, Some("abc".into()), true).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.manifest_hash.as_deref(), Some("abc"));
        assert_eq!(back.history, st.history);
        let resumed = back.into_state().unwrap();
        for i in 0..ids.len() {
            let a = reconstruct(&st, i).unwrap();
            let b = reconstruct(&resumed, i).unwrap();
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn checkpoint_length_matches_parameter_counts() {
    let (st, cfg, ids) = trained(Variant::Lcm);
    let (lat, gen) = toy_arch_templates("tiny16").unwrap();
    let ck = Checkpoint::from_state(&st, &cfg, &ids, None, true).unwrap();
    let header_len = serde_json::to_vec(&ck.header()).unwrap().len();
    let noise: usize = lat.input.iter().product();
    let stats: usize = gen.norm_channels().iter().map(|c| 2 * c).sum();
    let floats = noise + gen.param_count() + stats + ids.len() * lat.param_count();
    assert_eq!(ck.to_bytes().len(), 12 + header_len + 4 * floats);
    let slim = Checkpoint::from_state(&st, &cfg, &ids, None, false).unwrap();
    let slim_header = serde_json::to_vec(&slim.header()).unwrap().len();
    assert_eq!(slim.to_bytes().len(), 12 + slim_header + 4 * (noise + gen.param_count() + stats));
    assert!(Checkpoint::from_bytes(&slim.to_bytes()).unwrap().into_state().is_err());
}

#[test]
fn corrupt_checkpoints_give_distinct_errors() {
    let (st, cfg, ids) = trained(Variant::Lcm);
    let bytes = Checkpoint::from_state(&st, &cfg, &ids, None, true).unwrap().to_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(LcmError::BadMagic(_))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(LcmError::VersionMismatch { found: 9, .. })
    ));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(LcmError::Truncated(_))
    ));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..2]), Err(LcmError::Truncated(_))));

    let mut bad = bytes.clone();
    bad[12] = b'#';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(LcmError::Header(_))));

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(LcmError::Header(_))));
}

#[test]
fn checkpoint_file_io() {
    let (st, cfg, ids) = trained(Variant::GloMap);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.lcmk");
    let ck = Checkpoint::from_state(&st, &cfg, &ids, None, true).unwrap();
    save_checkpoint(&p, &ck).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap().to_bytes(), ck.to_bytes());
    assert!(load_checkpoint(&dir.path().join("missing.lcmk")).is_err());
}
