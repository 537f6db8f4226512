mod common;

use common::*;
use ganomaly_core::data::{resize_bilinear, LabeledDataset};
use ganomaly_core::eval::{
    anomaly_score, anomaly_scores, histogram, histogram_csv, latency_bench, roc_auc, roc_csv,
    scale_with_range, scores_csv, ScoreDistance, ScoreKind, ScoreRange, ScoreSet,
};
use ganomaly_core::model::{GanomalyModel, HyperParams};
use ganomaly_core::{Graph, Tensor};

fn model() -> GanomalyModel {
    GanomalyModel::new(tiny_hyper(), 21).unwrap()
}

#[test]
fn batched_and_single_scores_agree() {
    let m = model();
    let images = image_batch(&mut rng(1), 9, &m.hyper).unstack();
    let batched = anomaly_scores(&m, &images, ScoreKind::default(), 4)
        .unwrap()
        .scores;
    for (img, &b) in images.iter().zip(&batched) {
        let single = anomaly_score(&m, img).unwrap();
        assert_eq!(single.len(), 1);
        assert!(
            (single[0] - b).abs() <= 1e-5 * b.abs().max(1.0),
            "{} vs {b}",
            single[0]
        );
    }
}

#[test]
fn latent_score_sums_exactly_d_components() {
    let m = model();
    let d = m.hyper.latent_dim;
    let x = image_batch(&mut rng(2), 3, &m.hyper);
    let mut g = Graph::no_grad();
    let b = m.bind_generator(&mut g, false);
    let xv = g.constant(x.clone());
    let out = m.generator_forward_frozen(&mut g, &b, xv).unwrap();
    let (z, zh) = (g.value(out.z).unwrap(), g.value(out.z_hat).unwrap());
    assert_eq!(z.shape(), [3, d]);

    let l1 = anomaly_scores(&m, &x.unstack(), ScoreKind::Latent(ScoreDistance::L1), 3).unwrap();
    let l2 = anomaly_scores(&m, &x.unstack(), ScoreKind::Latent(ScoreDistance::L2), 3).unwrap();
    for i in 0..3 {
        let diffs: Vec<f64> = (0..d)
            .map(|j| f64::from(z.data()[i * d + j]) - f64::from(zh.data()[i * d + j]))
            .collect();
        let e1: f64 = diffs.iter().map(|v| v.abs()).sum();
        let e2: f64 = diffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((l1.scores[i] - e1).abs() < 1e-5 * e1.max(1.0));
        assert!((l2.scores[i] - e2).abs() < 1e-5 * e2.max(1.0));
    }
}

#[test]
fn scoring_leaves_the_model_unchanged() {
    let m = model();
    let before = m.clone();
    let images = image_batch(&mut rng(3), 4, &m.hyper).unstack();
    anomaly_scores(&m, &images, ScoreKind::Reconstruction, 2).unwrap();
    for (a, b) in m.networks().iter().zip(before.networks()) {
        assert_eq!(a.params(), b.params());
        assert_eq!(a.norm_states(), b.norm_states());
    }
}

#[test]
fn scoring_rejects_mismatched_images() {
    let m = model();
    let wrong = vec![Tensor::zeros(&[1, 16, 16])];
    assert!(anomaly_scores(&m, &wrong, ScoreKind::default(), 1).is_err());
    assert!(anomaly_score(&m, &Tensor::zeros(&[32, 32])).is_err());
}

#[test]
fn bench_reports_single_pass_statistics() {
    let m = model();
    let images = image_batch(&mut rng(4), 6, &m.hyper).unstack();
    let report = latency_bench(&m, &images, 7, 2).unwrap();
    assert_eq!(report.samples, 6);
    assert_eq!(report.repetitions, 7);
    assert!(!report.warmup_skipped);
    assert!(report.median_ms > 0.0 && report.median_ms <= report.p95_ms);
    assert_eq!(report.forward_passes_per_sample, 1.0);
    assert_eq!(report.backward_calls, 0);
    let json = serde_json::to_value(&report).unwrap();
    for key in ["median_ms", "p95_ms", "hardware", "warmup"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(latency_bench(&m, &images, 1, 0).unwrap().warmup_skipped);
}

#[test]
fn report_files_are_consistent() {
    let raw = vec![0.3, 0.1, 0.9, 0.5, 0.5, 0.2];
    let labels = vec![0, 0, 1, 1, 0, 1];
    let set = ScoreSet::new(raw.clone(), labels.clone()).unwrap();
    let csv = scores_csv(&set);
    assert_eq!(csv.lines().count(), raw.len() + 1);

    let curve = roc_auc(&raw, &labels).unwrap();
    let roc = roc_csv(&curve);
    let last = roc.lines().last().unwrap();
    assert_eq!(last, format!("auc,{},", curve.auc));

    let h = histogram(&set.scaled, &labels, 4).unwrap();
    let text = histogram_csv(&h);
    assert_eq!(text.lines().count(), 5);
    assert_eq!(h.bins.last().unwrap().abnormal, 1);
}

#[test]
fn reference_range_clamps_out_of_range_scores() {
    let range = ScoreRange::of(&[1.0, 3.0]).unwrap();
    let s = scale_with_range(&[0.0, 2.0, 5.0], range).unwrap();
    assert_eq!(s.values, vec![0.0, 0.5, 1.0]);
}

#[test]
fn bilinear_upsampling_matches_a_direct_oracle() {
    let (n, m) = (28usize, 32usize);
    let data: Vec<f32> = (0..n * n)
        .map(|i| if (i / n + i % n) % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let img = Tensor::new(&[1, n, n], data.clone()).unwrap();
    let out = resize_bilinear(&img, m, m).unwrap();

    let coord = |d: usize| {
        let s = ((d as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n - 1), s - lo as f64)
    };
    for y in 0..m {
        for x in 0..m {
            let (y0, y1, fy) = coord(y);
            let (x0, x1, fx) = coord(x);
            let p = |r: usize, c: usize| f64::from(data[r * n + c]);
            let expected = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1))
                + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
            let got = f64::from(out.data()[y * m + x]);
            assert!(
                (got - expected).abs() < 1e-5,
                "({y},{x}): {got} vs {expected}"
            );
        }
    }
}

#[test]
fn subsample_keeps_every_class() {
    let images = (0..50)
        .map(|i| Tensor::full(&[1, 1, 1], i as f32 / 50.0))
        .collect();
    let labels = (0..50)
        .map(|i| if i < 40 { 0 } else { 1 + i % 2 })
        .collect();
    let ds = LabeledDataset::new(images, labels).unwrap();
    let sub = ds.stratified_subsample(0.1, 5).unwrap();
    let count = |c| sub.labels().iter().filter(|&&l| l == c).count();
    assert_eq!((count(0), count(1), count(2)), (4, 1, 1));
    assert_eq!(sub, ds.stratified_subsample(0.1, 5).unwrap());
}

#[test]
fn model_rejects_invalid_sizes() {
    for size in [16, 48] {
        let h = HyperParams {
            image_size: size,
            ..tiny_hyper()
        };
        assert!(GanomalyModel::new(h, 0).is_err());
    }
}
