use modinv_core::metrics::{
    accuracy_from_logits, density_coverage, feature_distance, fid, inner_class_baseline, knn_radii,
    matrix_sqrt_psd, precision_recall, FeatureMatrix, FeatureSource,
};
use modinv_core::rng::RngStream;
use modinv_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn fm(rows: Vec<Vec<f64>>) -> FeatureMatrix {
    FeatureMatrix::new(rows, FeatureSource::Real, None).unwrap()
}

fn labelled(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureMatrix {
    FeatureMatrix::new(rows, FeatureSource::Generated, Some(labels)).unwrap()
}

fn gaussian_rows(rng: &mut RngStream, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.standard_normal() + shift).collect()).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn accuracy_on_perfect_logits_is_one() {
    let logits: Vec<Vec<f64>> = (0..10).map(|c| (0..10).map(|j| if j == c { 0.0 } else { -1.0 }).collect()).collect();
    let targets: Vec<usize> = (0..10).collect();
    let acc = accuracy_from_logits(&targets, &logits).unwrap();
    assert_eq!((acc.acc_at_1, acc.acc_at_5, acc.top_k), (1.0, 1.0, 5));
}

#[test]
fn random_three_class_accuracy_is_a_third() {
    let mut rng = RngStream::new(1, 1);
    let n = 9000;
    let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
    let targets: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let acc = accuracy_from_logits(&targets, &logits).unwrap();
    let sigma = (1.0f64 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
    assert!((acc.acc_at_1 - 1.0 / 3.0).abs() < 3.0 * sigma, "{}", acc.acc_at_1);
    // Fewer than five classes: the top-k set is every class.
    assert_eq!((acc.top_k, acc.acc_at_5), (3, 1.0));
}

#[test]
fn feature_distance_small_cases() {
    let train = labelled(vec![vec![1.0, 2.0], vec![5.0, 5.0]], vec![0, 1]);
    let gen = labelled(vec![vec![1.0, 2.0], vec![4.0, 7.0]], vec![0, 1]);
    let d = feature_distance(&gen, &train).unwrap();
    assert_eq!(d.per_class, vec![(0, 0.0), (1, 5.0)]);
    assert_eq!(d.mean, 2.5);
    let missing = labelled(vec![vec![0.0, 0.0]], vec![2]);
    assert!(matches!(feature_distance(&missing, &train), Err(Error::Contract(_))));
}

#[test]
fn feature_distance_matches_double_loop() {
    let mut rng = RngStream::new(2, 1);
    let gen_rows = gaussian_rows(&mut rng, 50, 6, 0.3);
    let train_rows = gaussian_rows(&mut rng, 30, 6, 0.0);
    let gen = labelled(gen_rows.clone(), vec![4; 50]);
    let train = labelled(train_rows.clone(), vec![4; 30]);
    let mut total = 0.0;
    for g in &gen_rows {
        let mut best = f64::INFINITY;
        for t in &train_rows {
            best = best.min(sq(g, t));
        }
        total += best;
    }
    assert_eq!(feature_distance(&gen, &train).unwrap().mean, total / 50.0);
}

#[test]
fn adding_generated_row_to_training_zeroes_its_distance() {
    let mut rng = RngStream::new(3, 1);
    let g = gaussian_rows(&mut rng, 1, 4, 2.0);
    let mut t = gaussian_rows(&mut rng, 10, 4, 0.0);
    let before = feature_distance(&labelled(g.clone(), vec![0]), &labelled(t.clone(), vec![0; 10])).unwrap();
    assert!(before.mean > 0.0);
    t.push(g[0].clone());
    let after = feature_distance(&labelled(g, vec![0]), &labelled(t, vec![0; 11])).unwrap();
    assert_eq!(after.mean, 0.0);
}

#[test]
fn inner_class_baseline_cases() {
    let same = inner_class_baseline(&labelled(vec![vec![1.0], vec![1.0]], vec![0, 0])).unwrap();
    assert_eq!(same.per_class, vec![(0, 0.0)]);
    let pair = inner_class_baseline(&labelled(vec![vec![0.0], vec![2.0]], vec![0, 0])).unwrap();
    assert_eq!(pair.per_class, vec![(0, 4.0)]);
    let single = labelled(vec![vec![0.0], vec![2.0], vec![3.0]], vec![0, 0, 1]);
    assert!(matches!(inner_class_baseline(&single), Err(Error::Contract(_))));
}

#[test]
fn inner_class_baseline_matches_brute_force() {
    let mut rng = RngStream::new(4, 1);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..5 {
        let n = 2 + c * 3;
        rows.extend(gaussian_rows(&mut rng, n, 3, c as f64));
        labels.extend(std::iter::repeat_n(c, n));
    }
    let got = inner_class_baseline(&labelled(rows.clone(), labels.clone())).unwrap();
    let mut per_class = Vec::new();
    for c in 0..5 {
        let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(r, _)| r).collect();
        let n = members.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    s += sq(members[i], members[j]);
                }
            }
            acc += s / (n - 1) as f64;
        }
        per_class.push(acc / n as f64);
    }
    for (c, (&(gc, gv), want)) in got.per_class.iter().zip(&per_class).enumerate() {
        assert_eq!(gc, c);
        assert!((gv - want).abs() <= 1e-12 * want.max(1.0));
    }
    let mean = per_class.iter().sum::<f64>() / 5.0;
    let var = per_class.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((got.mean - mean).abs() < 1e-12 && (got.std - var.sqrt()).abs() < 1e-12);
}

#[test]
fn matrix_sqrt_cases() {
    let eye = DMatrix::<f64>::identity(3, 3);
    assert!((matrix_sqrt_psd(&eye).unwrap() - &eye).amax() < 1e-15);
    let mut rng = RngStream::new(5, 1);
    let a = DMatrix::from_fn(6, 6, |_, _| rng.standard_normal());
    let s = &a * a.transpose() + DMatrix::identity(6, 6) * 0.1;
    let r = matrix_sqrt_psd(&s).unwrap();
    assert!((&r * &r - &s).norm() / s.norm() < 1e-8);
}

#[test]
fn fid_errors() {
    let one = fm(vec![vec![0.0, 1.0]]);
    let two = fm(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    assert!(fid(&one, &two).is_err());
    assert!(fid(&two, &fm(vec![vec![0.0], vec![1.0]])).is_err());
}

#[test]
fn fid_translation_covariance() {
    let mut rng = RngStream::new(6, 1);
    let a = gaussian_rows(&mut rng, 300, 4, 0.0);
    let b = gaussian_rows(&mut rng, 300, 4, 0.4);
    let base = fid(&fm(a.clone()), &fm(b.clone())).unwrap();
    let v = [0.7, -1.2, 0.1, 2.0];
    let shift = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().zip(&v).map(|(x, s)| x + s).collect()).collect()
    };
    let both = fid(&fm(shift(&a)), &fm(shift(&b))).unwrap();
    assert!((both - base).abs() < 1e-9, "{base} vs {both}");
    let one = fid(&fm(a.clone()), &fm(shift(&a))).unwrap();
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    assert!((one - norm2).abs() < 1e-6);
}

#[test]
fn separated_clusters_have_zero_prdc() {
    let mut rng = RngStream::new(7, 1);
    let real = gaussian_rows(&mut rng, 20, 2, 0.0);
    let fake = gaussian_rows(&mut rng, 20, 2, 0.0)
        .into_iter()
        .map(|r| r.iter().map(|x| x + 1000.0).collect())
        .collect();
    let (real, fake) = (fm(real), fm(fake));
    assert_eq!(precision_recall(&real, &fake, 3).unwrap(), (0.0, 0.0));
    assert_eq!(density_coverage(&real, &fake, 3).unwrap(), (0.0, 0.0));
}

#[test]
fn identical_sets_have_full_coverage() {
    let mut rng = RngStream::new(8, 1);
    let real = fm(gaussian_rows(&mut rng, 15, 3, 0.0));
    assert_eq!(density_coverage(&real, &real, 1).unwrap().1, 1.0);
    assert_eq!(precision_recall(&real, &real, 3).unwrap(), (1.0, 1.0));
}

#[test]
fn knn_needs_more_than_k_points() {
    let small = fm(vec![vec![0.0], vec![1.0], vec![2.0]]);
    let big = fm(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
    assert!(matches!(knn_radii(&small, 3), Err(Error::Contract(_))));
    assert!(precision_recall(&small, &big, 3).is_err());
    assert!(precision_recall(&big, &small, 3).is_err());
    assert!(density_coverage(&small, &big, 3).is_err());
}

#[test]
fn features_text_round_trip() {
    let mut rng = RngStream::new(9, 1);
    let rows = gaussian_rows(&mut rng, 7, 3, 0.0);
    let m = labelled(rows, vec![0, 0, 1, 1, 2, 2, 2]);
    let back = FeatureMatrix::from_text(&m.to_text()).unwrap();
    assert_eq!(m, back);
    let unlabelled = fm(vec![vec![1e-300, -2.5]]);
    assert_eq!(FeatureMatrix::from_text(&unlabelled.to_text()).unwrap(), unlabelled);
    assert!(FeatureMatrix::from_text("garbage").is_err());
    assert!(FeatureMatrix::new(vec![vec![f64::NAN]], FeatureSource::Real, None).is_err());
}

fn permuted(rows: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 77);
    let mut out = rows.to_vec();
    for i in (1..out.len()).rev() {
        let j = rng.index_inclusive(i);
        out.swap(i, j);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_metrics_ignore_row_order(seed in 0u64..10_000, k in 1usize..5, shift in 0.0f64..2.0) {
        let mut rng = RngStream::new(seed, 1);
        let real = gaussian_rows(&mut rng, 25, 3, 0.0);
        let fake = gaussian_rows(&mut rng, 20, 3, shift);
        let a_pr = precision_recall(&fm(real.clone()), &fm(fake.clone()), k).unwrap();
        let a_dc = density_coverage(&fm(real.clone()), &fm(fake.clone()), k).unwrap();
        let (pr, pf) = (fm(permuted(&real, seed)), fm(permuted(&fake, seed + 1)));
        prop_assert_eq!(a_pr, precision_recall(&pr, &pf, k).unwrap());
        prop_assert_eq!(a_dc, density_coverage(&pr, &pf, k).unwrap());
    }

    #[test]
    fn fid_is_symmetric(seed in 0u64..10_000) {
        let mut rng = RngStream::new(seed, 1);
        let a = fm(gaussian_rows(&mut rng, 40, 3, 0.0));
        let b = fm(gaussian_rows(&mut rng, 30, 3, 0.5));
        prop_assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn top1_never_exceeds_top5(seed in 0u64..10_000, classes in 1usize..12) {
        let mut rng = RngStream::new(seed, 1);
        let logits: Vec<Vec<f64>> = (0..30).map(|_| (0..classes).map(|_| rng.standard_normal()).collect()).collect();
        let targets: Vec<usize> = (0..30).map(|i| i % classes).collect();
        let acc = accuracy_from_logits(&targets, &logits).unwrap();
        prop_assert!(acc.acc_at_1 <= acc.acc_at_5);
        prop_assert!((0.0..=1.0).contains(&acc.acc_at_1) && (0.0..=1.0).contains(&acc.acc_at_5));
    }
}
