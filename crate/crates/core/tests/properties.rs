use std::fs;

use dance_core::explain::rank_by_magnitude;
use dance_core::ingest::tensor::{decode, encode};
use dance_core::ingest::{load_manifest, read_tensor, write_tensor, ManifestFile, Tensor, VideoRecord};
use dance_core::train::classifier::soft_threshold;
use dance_core::train::standardize_activations;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..6, 1..=3)
}

proptest! {
    #[test]
    fn tensor_encoding_is_bit_exact(dims in shape(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: usize = dims.iter().product();
        let data: Vec<f32> = (0..len).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
        let t = Tensor::new(dims.clone(), data).unwrap();
        let back = decode(&encode(&t)).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn truncated_or_padded_payload_rejected(dims in prop::collection::vec(1usize..5, 1..=3), extra in 1usize..4) {
        let len: usize = dims.iter().product();
        let bytes = encode(&Tensor::new(dims, vec![1.0; len]).unwrap());
        prop_assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut padded = bytes.clone();
        padded.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(decode(&padded).is_err());
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std(n in 2usize..30, m in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array2::from_shape_fn((n, m), |_| rng.random::<f64>() * 10.0 - 3.0);
        let s = standardize_activations(z.view()).unwrap();
        for col in s.z.columns() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(v, t);
        prop_assert!(s.abs() <= v.abs());
        prop_assert!(s == 0.0 || s.signum() == v.signum());
        prop_assert!((s.abs() - (v.abs() - t).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn ranking_orders_by_magnitude(values in prop::collection::vec(-5.0f64..5.0, 0..20)) {
        let v = Array1::from(values);
        let order = rank_by_magnitude(v.view());
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..v.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            let (a, b) = (v[w[0]].abs(), v[w[1]].abs());
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }
}

#[test]
fn hundred_random_tensor_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let ndim = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..ndim).map(|_| rng.random_range(0..7)).collect();
        let len = dims.iter().product();
        let data: Vec<f32> = (0..len).map(|_| rng.random::<f32>() * 200.0 - 100.0).collect();
        let t = Tensor::new(dims, data).unwrap();
        let path = dir.path().join(format!("t{i}.dtf"));
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }
}

#[test]
fn manifest_order_does_not_change_per_video_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut videos = Vec::new();
    for i in 0..6 {
        let feat = format!("f{i}.dtf");
        write_tensor(dir.path().join(&feat), &Tensor::new(vec![4], vec![i as f32; 4]).unwrap()).unwrap();
        let vlm = format!("e{i}.dtf");
        write_tensor(dir.path().join(&vlm), &Tensor::new(vec![3], vec![1.0, i as f32, 0.0]).unwrap()).unwrap();
        videos.push(VideoRecord {
            id: format!("v{i}"),
            feature_path: feat.into(),
            pose_dir: None,
            vlm_embedding_path: vlm.into(),
            label: i % 2,
            frames_path: None,
        });
    }
    let splits = [("train".to_string(), vec!["v0".into(), "v3".into(), "v4".into()])].into();
    let mut file = ManifestFile {
        class_names: vec!["a".into(), "b".into()],
        videos,
        splits,
    };
    let path = dir.path().join("m.json");
    file.write(&path).unwrap();
    let m1 = load_manifest(&path).unwrap();
    file.videos.reverse();
    fs::remove_file(&path).unwrap();
    file.write(&path).unwrap();
    let m2 = load_manifest(&path).unwrap();
    assert_eq!(m1.feature_dim(), m2.feature_dim());
    assert_eq!(m1.vlm_dim(), m2.vlm_dim());
    for v in m1.videos() {
        let (i1, i2) = (m1.index_of(&v.id).unwrap(), m2.index_of(&v.id).unwrap());
        assert_eq!(m1.record(&v.id), m2.record(&v.id));
        assert_eq!(m1.load_features(&[i1]).unwrap(), m2.load_features(&[i2]).unwrap());
        assert_eq!(m1.labels(&[i1]), m2.labels(&[i2]));
    }
    let ids = |m: &dance_core::ingest::DatasetManifest| {
        m.split_indices("train").unwrap().iter().map(|&r| m.videos()[r].id.clone()).collect::<Vec<_>>()
    };
    assert_eq!(ids(&m1), ids(&m2));
}
