mod common;

use common::brute_force_auc;
use ganomaly_core::data::{
    encode_raw_container, make_anomaly_split, parse_idx, read_raw_container, LabeledDataset,
};
use ganomaly_core::eval::{histogram, roc_auc, scale_scores, Threshold};
use ganomaly_core::objectives::{adversarial_loss, contextual_loss, encoder_loss};
use ganomaly_core::train::Checkpoint;
use ganomaly_core::{Graph, Tensor};
use proptest::prelude::*;

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        let scores = prop_oneof![
            prop::collection::vec((0u8..4).prop_map(f64::from), n),
            prop::collection::vec(-1e3f64..1e3, n),
        ];
        (scores, prop::collection::vec(0u8..=1, n)).prop_map(|(s, mut l)| {
            l[0] = 0;
            l[1] = 1;
            (s, l)
        })
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10f32..10.0, rows * cols)
        .prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn item(g: &Graph, v: ganomaly_core::Var) -> f32 {
    g.value(v).unwrap().item().unwrap()
}

proptest! {
    #[test]
    fn scaled_scores_stay_in_unit_interval_and_keep_order(
        raw in prop::collection::vec(-1e6f64..1e6, 1..100)
    ) {
        let s = scale_scores(&raw).unwrap();
        prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] <= raw[j] {
                    prop_assert!(s.values[i] <= s.values[j]);
                }
            }
        }
    }

    #[test]
    fn auc_equals_pairwise_statistic((scores, labels) in labeled_scores()) {
        let curve = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(curve.auc, brute_force_auc(&scores, &labels));
        prop_assert!((curve.trapezoid_area() - curve.auc).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_is_monotone((scores, labels) in labeled_scores()) {
        let curve = roc_auc(&scores, &labels).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
        let last = curve.points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn histogram_partitions_every_score(
        (scores, labels) in labeled_scores(),
        bins in 1usize..30,
    ) {
        let scaled = scale_scores(&scores).unwrap().values;
        let h = histogram(&scaled, &labels, bins).unwrap();
        prop_assert_eq!(h.bins.len(), bins);
        let normal: usize = h.bins.iter().map(|b| b.normal).sum();
        let abnormal: usize = h.bins.iter().map(|b| b.abnormal).sum();
        prop_assert_eq!(abnormal, labels.iter().filter(|&&l| l == 1).count());
        prop_assert_eq!(normal + abnormal, labels.len());
    }

    #[test]
    fn threshold_is_strict(phi in 0.0f64..=1.0) {
        let t = Threshold::new(phi).unwrap();
        prop_assert!(!t.is_abnormal(phi));
        prop_assert_eq!(t.is_abnormal(1.0), phi < 1.0);
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_on_identical_inputs(
        (a, b) in (1usize..5, 1usize..9).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
    ) {
        let mut g = Graph::no_grad();
        let (va, vb) = (g.constant(a), g.constant(b));
        let losses = [
            adversarial_loss(&mut g, va, vb).unwrap(),
            contextual_loss(&mut g, va, vb).unwrap(),
            encoder_loss(&mut g, va, vb).unwrap(),
        ];
        for l in losses {
            prop_assert!(item(&g, l) >= 0.0);
        }
        let same = [
            adversarial_loss(&mut g, va, va).unwrap(),
            contextual_loss(&mut g, va, va).unwrap(),
            encoder_loss(&mut g, va, va).unwrap(),
        ];
        for l in same {
            prop_assert_eq!(item(&g, l), 0.0);
        }
    }

    #[test]
    fn split_is_disjoint_and_complete(
        labels in prop::collection::vec(0u32..4, 12..120),
        abnormal in 0u32..4,
        seed in any::<u64>(),
    ) {
        let images = (0..labels.len()).map(|i| Tensor::full(&[1, 1, 1], i as f32)).collect();
        let ds = LabeledDataset::new(images, labels.clone()).unwrap();
        let Ok(split) = make_anomaly_split(&ds, abnormal, seed) else {
            // too few normals or no abnormal sample
            return Ok(());
        };
        let mut seen = vec![0u8; labels.len()];
        for &i in split.train_sources().iter().chain(split.test_sources()) {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(split.train_sources().iter().all(|&i| labels[i] != abnormal));
        let test_labels = split.test_labels().to_vec();
        for (&src, &l) in split.test_sources().iter().zip(&test_labels) {
            prop_assert_eq!(l == 1, labels[src] == abnormal);
        }
        let normals = labels.iter().filter(|&&l| l != abnormal).count();
        prop_assert_eq!(split.train_normal().len(), normals * 4 / 5);
    }

    #[test]
    fn raw_container_round_trips(
        (h, w, pixels) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(prop::collection::vec(-1f32..=1.0, h * w), 1..6))
        }),
        label_seed in any::<u32>(),
    ) {
        let n = pixels.len();
        let images = pixels.into_iter().map(|p| Tensor::new(&[1, h, w], p).unwrap()).collect();
        let labels = (0..n as u32).map(|i| label_seed.wrapping_add(i) % 10).collect();
        let ds = LabeledDataset::new(images, labels).unwrap();
        let bytes = encode_raw_container(&ds).unwrap();
        let back = read_raw_container(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode_raw_container(&back).unwrap(), bytes);
    }

    #[test]
    fn idx_pixels_map_to_unit_range(
        (rows, cols, pixels) in (1u32..5, 1u32..5).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(any::<u8>(), (r * c) as usize * 3))
        }),
    ) {
        let mut images = Vec::new();
        for v in [0x0803u32, 3, rows, cols] {
            images.extend_from_slice(&v.to_be_bytes());
        }
        images.extend_from_slice(&pixels);
        let mut labels = Vec::new();
        for v in [0x0801u32, 3] {
            labels.extend_from_slice(&v.to_be_bytes());
        }
        labels.extend_from_slice(&[7, 0, 9]);
        let ds = parse_idx(&images, &labels).unwrap();
        prop_assert_eq!(ds.labels(), &[7, 0, 9]);
        let flat: Vec<f32> = ds.images().iter().flat_map(|t| t.data().to_vec()).collect();
        for (&p, v) in pixels.iter().zip(flat) {
            prop_assert_eq!(v, f32::from(p) / 127.5 - 1.0);
        }
    }

    #[test]
    fn checkpoint_records_round_trip(
        tensors in prop::collection::vec(prop::collection::vec(any::<f32>(), 1..20), 1..6),
        counters in prop::collection::vec(any::<u64>(), 0..8),
    ) {
        let mut c = Checkpoint::new();
        for (i, t) in tensors.iter().enumerate() {
            c.insert_tensor(format!("t.{i}"), &Tensor::new(&[t.len()], t.clone()).unwrap()).unwrap();
        }
        c.insert_u64("counters", &counters).unwrap();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.u64s("counters").unwrap(), &counters[..]);
        for (i, t) in tensors.iter().enumerate() {
            let got = back.tensor(&format!("t.{i}")).unwrap();
            let same = got.data().iter().zip(t).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
