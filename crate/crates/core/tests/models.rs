use std::sync::OnceLock;

use modinv_core::models::{
    render_blobs, Activation, Blob, BlobParams, DifferentiableModel, FeatureMap, FrameWindow, ImageClassifier,
    ImagePrior, LogitVector, Matrix, PrototypeClassifier,
};
use modinv_core::rng::RngStream;
use modinv_core::tensor::{ImageShape, ImageTensor, LatentVector};
use modinv_core::toy::{ToyBenchmark, ToyConfig};
use modinv_core::Error;
use proptest::prelude::*;

fn bench() -> &'static ToyBenchmark {
    static B: OnceLock<ToyBenchmark> = OnceLock::new();
    B.get_or_init(|| ToyBenchmark::build(&ToyConfig::default()).unwrap())
}

fn normal_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

fn random_w(rng: &mut RngStream, scale: f64) -> LatentVector {
    let gen = &bench().models.generator;
    LatentVector::intermediate(normal_vec(rng, gen.w_dim()).iter().map(|v| scale * v).collect())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / s.max(1e-12)
}

#[test]
fn truncation_endpoints() {
    let gen = &bench().models.generator;
    let mut rng = RngStream::new(1, 1);
    let z = LatentVector::input(normal_vec(&mut rng, gen.z_dim()));
    let full = gen.map_latent(&z, 1.0, 8).unwrap();
    assert!(rel_err(&full.values, &gen.mapping(&z.values)) < 1e-14);
    let none = gen.map_latent(&z, 0.0, 8).unwrap();
    assert_eq!(none.values, gen.mean_latent);
    let half = gen.map_latent(&z, 0.5, 8).unwrap();
    for ((h, m), mean) in half.values.iter().zip(&full.values).zip(&gen.mean_latent) {
        assert!((h - (mean + 0.5 * (m - mean))).abs() < 1e-12);
    }
}

#[test]
fn truncation_is_linear_in_psi() {
    let gen = &bench().models.generator;
    let mut rng = RngStream::new(2, 1);
    for _ in 0..20 {
        let z = LatentVector::input(normal_vec(&mut rng, gen.z_dim()));
        let psi = rng.uniform(0.0, 1.0);
        let a = gen.map_latent(&z, psi, 8).unwrap();
        let b = gen.map_latent(&z, 1.0 - psi, 8).unwrap();
        let h = gen.map_latent(&z, 0.5, 8).unwrap();
        for i in 0..h.dim() {
            assert!(((a.values[i] + b.values[i]) / 2.0 - h.values[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn mapping_rejects_wrong_latents() {
    let gen = &bench().models.generator;
    let z = LatentVector::input(vec![0.0; gen.z_dim() + 1]);
    assert!(matches!(gen.map_latent(&z, 0.5, 8), Err(Error::Contract(_))));
    let w = LatentVector::input(vec![0.0; gen.w_dim()]);
    assert!(matches!(gen.synthesize(&w), Err(Error::Contract(_))));
    let w = LatentVector::intermediate(vec![0.0; gen.w_dim()]);
    assert!(gen.map_latent(&w, 0.5, 8).is_err());
}

#[test]
fn generator_output_range_over_1000_latents() {
    let gen = &bench().models.generator;
    let mut rng = RngStream::new(3, 1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000 {
        // Include some far-out latents to exercise saturation.
        let w = random_w(&mut rng, if i % 10 == 0 { 20.0 } else { 1.0 });
        let (a, b) = gen.synthesize(&w).unwrap().min_max();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    assert!(lo >= -1.0 && hi <= 1.0, "range [{lo}, {hi}]");
}

#[test]
fn synthesis_is_deterministic() {
    let gen = &bench().models.generator;
    let w = random_w(&mut RngStream::new(4, 1), 1.0);
    assert_eq!(gen.synthesize(&w).unwrap(), gen.synthesize(&w).unwrap());
}

#[test]
fn centered_blob_peaks_at_center_pixel() {
    let shape = ImageShape::new(21, 21, 3);
    let params = BlobParams {
        blobs: vec![Blob {
            center: [0.5, 0.5],
            sigma: 0.2,
            amplitude: 1.0,
            color: vec![1.0, 0.5, 2.0],
        }],
        background: vec![-0.3; 3],
    };
    let window = bench().models.generator.window;
    let x = render_blobs(&params, shape, window).unwrap();
    for ch in 0..3 {
        let mut best = (0, 0);
        for i in 0..21 {
            for j in 0..21 {
                if x.get(i, j, ch) > x.get(best.0, best.1, ch) {
                    best = (i, j);
                }
            }
        }
        assert_eq!(best, (10, 10));
        // Oracle: tanh(bg + amp * color) at the exact center.
        let expected = (-0.3 + params.blobs[0].color[ch]).tanh();
        assert!((x.get(10, 10, ch) - expected).abs() < 1e-12);
    }
    assert!(render_blobs(&params, shape, FrameWindow::UNIT).unwrap().get(10, 10, 0) > 0.0);
}

fn small_classifier(rng: &mut RngStream, activation: Activation) -> PrototypeClassifier {
    let shape = ImageShape::new(4, 4, 2);
    let dim = 5;
    let map = FeatureMap::new(
        shape,
        Matrix::new(dim, shape.len(), normal_vec(rng, dim * shape.len())).unwrap(),
        normal_vec(rng, dim),
        activation,
    )
    .unwrap();
    let protos = Matrix::new(3, dim, normal_vec(rng, 3 * dim)).unwrap();
    PrototypeClassifier::new(map, protos, 0.7).unwrap()
}

#[test]
fn classifier_scores_at_own_prototype() {
    let mut rng = RngStream::new(5, 1);
    let mut clf = small_classifier(&mut rng, Activation::Tanh);
    let x = ImageTensor::new(clf.input_shape(), (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
    let f = clf.feature_map.features(x.data()).unwrap();
    clf.prototypes.row_mut(1).copy_from_slice(&f);
    let (logits, scores) = clf.classify(&x).unwrap();
    assert_eq!(logits.argmax(), 1);
    assert_eq!(logits.values()[1], 0.0);
    assert!(logits.values().iter().enumerate().all(|(c, &v)| c == 1 || v < 0.0));
    assert!((scores.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(scores.argmax(), logits.argmax());
}

#[test]
fn equidistant_prototypes_give_uniform_scores() {
    let mut rng = RngStream::new(6, 1);
    let mut clf = small_classifier(&mut rng, Activation::Identity);
    let x = ImageTensor::filled(clf.input_shape(), 0.1);
    let f = clf.feature_map.features(x.data()).unwrap();
    // Prototypes f + e_k are all at unit distance.
    for c in 0..3 {
        let row = clf.prototypes.row_mut(c);
        row.copy_from_slice(&f);
        row[c] += 1.0;
    }
    let (_, scores) = clf.classify(&x).unwrap();
    for s in scores.values() {
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn classifier_rejects_wrong_shape() {
    let clf = small_classifier(&mut RngStream::new(7, 1), Activation::Tanh);
    let x = ImageTensor::filled(ImageShape::new(4, 4, 3), 0.0);
    assert!(matches!(clf.classify(&x), Err(Error::Contract(_))));
    assert!(clf.input_gradient(&[0.0; 32], &[1.0; 2]).is_err());
}

fn fd_vjp(model: &dyn DifferentiableModel, x: &[f64], cot: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let fa = model.forward(&a).unwrap();
            let fb = model.forward(&b).unwrap();
            fa.iter().zip(&fb).zip(cot).map(|((p, q), c)| c * (p - q)).sum::<f64>() / (2.0 * h)
        })
        .collect()
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(8, 1);
    for trial in 0..50 {
        let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Identity };
        let clf = small_classifier(&mut rng, act);
        let x: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cot = normal_vec(&mut rng, 3);
        let g = clf.input_gradient(&x, &cot).unwrap();
        let fd = fd_vjp(&clf, &x, &cot, 1e-4);
        assert!(rel_err(&g, &fd) < 1e-4, "trial {trial}: {}", rel_err(&g, &fd));
    }
}

#[test]
fn zero_cotangent_gives_zero_gradient() {
    let b = bench();
    let x = b.class_template_image(3).unwrap();
    let g = b.models.target.input_gradient(x.data(), &[0.0; 10]).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
    let w = LatentVector::intermediate(vec![0.2; b.models.generator.w_dim()]);
    let g = b
        .models
        .generator
        .synthesis_gradient(&w, &vec![0.0; b.models.generator.output_shape().len()])
        .unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
}

#[test]
fn reference_models_gradients_match_finite_differences() {
    let b = bench();
    let mut rng = RngStream::new(9, 1);
    let x = b.class_template_image(2).unwrap();
    let models: [&dyn DifferentiableModel; 3] = [&b.models.target, &b.models.evaluation, &b.models.discriminator];
    for m in models {
        let cot = normal_vec(&mut rng, m.output_len());
        let g = m.input_gradient(x.data(), &cot).unwrap();
        let fd = fd_vjp(m, x.data(), &cot, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
    }
}

#[test]
fn score_of_synthesized_image_chain_rule() {
    // d y_c(T(G(w))) / dw through composed vector-Jacobian products vs
    // finite differences of the whole composition.
    let b = bench();
    let gen = &b.models.generator;
    let target = &b.models.target;
    let pipeline = modinv_core::attack::AttackConfig::default().optimization_transforms.without_random();
    let mut rng = RngStream::new(10, 1);
    let score = |w: &[f64], class: usize| -> f64 {
        let x = gen.synthesize(&LatentVector::intermediate(w.to_vec())).unwrap();
        let (t, _) = pipeline.apply(&x, &mut RngStream::new(0, 0)).unwrap();
        target.classify(&t).unwrap().1.values()[class]
    };
    for trial in 0..5 {
        let w = random_w(&mut rng, 0.7);
        let class = trial * 2;
        let x = gen.synthesize(&w).unwrap();
        let (t, trace) = pipeline.apply(&x, &mut RngStream::new(0, 0)).unwrap();
        let (_, y) = target.classify(&t).unwrap();
        let y = y.values();
        // dy_c/do_j = y_c (delta_cj - y_j)
        let d_logits: Vec<f64> = (0..y.len())
            .map(|j| y[class] * (f64::from(u8::from(j == class)) - y[j]))
            .collect();
        let d_t = target.input_gradient(t.data(), &d_logits).unwrap();
        let d_x = trace.backward(&d_t);
        let g = gen.synthesis_gradient(&w, &d_x).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..w.dim())
            .map(|i| {
                let mut a = w.values.clone();
                let mut c = w.values.clone();
                a[i] += h;
                c[i] -= h;
                (score(&a, class) - score(&c, class)) / (2.0 * h)
            })
            .collect();
        if fd.iter().map(|v| v.abs()).sum::<f64>() > 1e-8 {
            assert!(rel_err(&g, &fd) < 1e-3, "trial {trial}: {}", rel_err(&g, &fd));
        }
    }
}

#[test]
fn prototype_recovery_by_feature_space_ascent() {
    let target = &bench().models.target;
    let dim = target.feature_map.dim();
    let lr = 0.1 / target.sharpness;
    for c in 0..target.prototypes.rows {
        let mu = target.prototypes.row(c);
        let mut f = vec![0.0; dim];
        for _ in 0..200 {
            // Ascent on o_c = -gamma * ||f - mu||^2.
            for (v, m) in f.iter_mut().zip(mu) {
                *v += lr * (-2.0 * target.sharpness * (*v - m));
            }
        }
        let d: f64 = f.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(d < 1e-3, "class {c} ended {d} from its prototype");
        let logits = LogitVector::new(target.logits_from_features(&f)).unwrap();
        assert_eq!(logits.argmax(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_gradient_is_linear_in_cotangent(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = RngStream::new(seed, 2);
        let clf = small_classifier(&mut rng, Activation::Tanh);
        let x: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (u, v) = (normal_vec(&mut rng, 3), normal_vec(&mut rng, 3));
        let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let gu = clf.input_gradient(&x, &u).unwrap();
        let gv = clf.input_gradient(&x, &v).unwrap();
        let gm = clf.input_gradient(&x, &mix).unwrap();
        for i in 0..gm.len() {
            prop_assert!((gm[i] - (a * gu[i] + b * gv[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn scores_always_sum_to_one(seed in 0u64..1000) {
        let mut rng = RngStream::new(seed, 3);
        let x = ImageTensor::new(
            bench().models.target.input_shape(),
            (0..768).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        ).unwrap();
        let (_, s) = bench().models.target.classify(&x).unwrap();
        prop_assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
