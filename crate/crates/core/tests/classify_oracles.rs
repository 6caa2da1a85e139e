mod common;

use common::oracles::nearest_row;
use ecfkit::classify::{
    cross_validate, fit_binary, predict, predict_codeword, train_ensemble, BinaryLearnerSpec, CodingSource, Decoding,
};
use ecfkit::data::{generate_toy, stratified_folds, LabeledDataset, ToyOptions};
use ecfkit::design::{design_from_data, AllocationPolicy, LengthChoice};
use ecfkit::ecf::{factorize, make_policy, EcfOptions};
use ecfkit::ecoc::{dense_random_coding, ova_coding};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn blobs(centers: &[[f64; 2]], per_class: usize, sd: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let n = centers.len() * per_class;
    let mut x = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for (c, m) in centers.iter().enumerate() {
        for s in 0..per_class {
            let r = c * per_class + s;
            x[(r, 0)] = m[0] + noise.sample(&mut rng);
            x[(r, 1)] = m[1] + noise.sample(&mut rng);
            labels.push(c);
        }
    }
    LabeledDataset::new(x, labels, centers.len()).unwrap()
}

const TRIANGLE: [[f64; 2]; 3] = [[0.0, 0.0], [6.0, 0.0], [3.0, 5.0]];

/// Regularized mean log-loss, written out directly.
fn loss(x: &DMatrix<f64>, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for r in 0..n {
        let m: f64 = (0..x.ncols()).map(|c| x[(r, c)] * w[c]).sum::<f64>() + b;
        total += (1.0 + (-y[r] * m).exp()).ln();
    }
    total / n as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

fn fd_gradient_norm(x: &DMatrix<f64>, y: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let h = 1e-6;
    let mut sq = 0.0;
    for c in 0..=w.len() {
        let (mut wp, mut wm, mut bp, mut bm) = (w.to_vec(), w.to_vec(), b, b);
        if c < w.len() {
            wp[c] += h;
            wm[c] -= h;
        } else {
            bp += h;
            bm -= h;
        }
        let g = (loss(x, y, &wp, bp, lambda) - loss(x, y, &wm, bm, lambda)) / (2.0 * h);
        sq += g * g;
    }
    sq.sqrt()
}

#[test]
fn gradient_descent_reaches_a_near_stationary_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (n, d) = (200, 3);
    let truth = [1.5, -1.0, 0.5];
    let x = DMatrix::from_fn(n, d, |_, _| noise.sample(&mut rng));
    let labels: Vec<i8> = (0..n)
        .map(|r| {
            let m: f64 = (0..d).map(|c| x[(r, c)] * truth[c]).sum();
            let p = 1.0 / (1.0 + (-m).exp());
            if rng.random_bool(p) {
                1
            } else {
                -1
            }
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|v| f64::from(*v)).collect();
    let spec = BinaryLearnerSpec {
        standardize: false,
        ..BinaryLearnerSpec::default()
    };
    let model = fit_binary(&spec, &x, &labels).unwrap();
    let start = fd_gradient_norm(&x, &y, &[0.0; 3], 0.0, spec.lambda);
    let w: Vec<f64> = model.weights().iter().copied().collect();
    let end = fd_gradient_norm(&x, &y, &w, model.bias(), spec.lambda);
    assert!(end <= 1e-2 * start, "gradient {end} vs initial {start}");
    assert!(loss(&x, &y, &w, model.bias(), spec.lambda) < loss(&x, &y, &[0.0; 3], 0.0, spec.lambda));
}

#[test]
fn ova_dichotomizers_fit_separated_blobs() {
    let data = blobs(&TRIANGLE, 50, 0.5, 3);
    let x = ova_coding(3).unwrap();
    let model = train_ensemble(&x, &data, &BinaryLearnerSpec::default()).unwrap();
    assert_eq!(model.dichotomizers.len(), 3);
    for (j, h) in model.dichotomizers.iter().enumerate() {
        let correct = (0..data.len())
            .filter(|&r| {
                let s: Vec<f64> = data.features().row(r).iter().copied().collect();
                h.predict(&s) == x.get(data.labels()[r], j)
            })
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.9, "dichotomy {j}: {correct}");
    }
}

#[test]
fn centroids_decode_to_their_class() {
    let data = blobs(&TRIANGLE, 50, 0.5, 4);
    let model = train_ensemble(&ova_coding(3).unwrap(), &data, &BinaryLearnerSpec::default()).unwrap();
    for (c, m) in TRIANGLE.iter().enumerate() {
        assert_eq!(predict(&model, m, Decoding::Hamming).unwrap(), c);
        assert_eq!(predict(&model, m, Decoding::LossWeighted).unwrap(), c);
    }
}

#[test]
fn hamming_prediction_is_the_nearest_codeword() {
    let data = generate_toy(&ToyOptions {
        k: 6,
        per_class: 30,
        ..ToyOptions::default()
    })
    .unwrap();
    let x = dense_random_coding(6, 50, 2).unwrap();
    let rows: Vec<Vec<i8>> = x.rows().map(<[i8]>::to_vec).collect();
    let model = train_ensemble(&x, &data, &BinaryLearnerSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let s = [rng.random_range(-1.0..4.0), rng.random_range(-1.0..4.0)];
        let y = predict_codeword(&model, &s).unwrap();
        assert_eq!(predict(&model, &s, Decoding::Hamming).unwrap(), nearest_row(&rows, &y));
    }
}

#[test]
fn separable_problem_is_solved_by_any_sensible_coding() {
    let data = blobs(&TRIANGLE, 40, 0.3, 5);
    let sources = [
        CodingSource::Fixed {
            coding: ova_coding(3).unwrap(),
            name: "ova".into(),
        },
        CodingSource::Fixed {
            coding: dense_random_coding(3, 20, 1).unwrap(),
            name: "dense".into(),
        },
        CodingSource::Ecf {
            policy: AllocationPolicy::Easy,
            length: LengthChoice::Auto,
            min_distance: 1,
            seed: 0,
        },
    ];
    for src in &sources {
        let r = cross_validate(&data, src, &BinaryLearnerSpec::default(), Decoding::Hamming, 5, 1).unwrap();
        assert!(r.mean >= 0.95, "{}: {}", src.descriptor(), r.mean);
        assert_eq!(r.fold_accuracies.len(), 5);
    }
}

#[test]
fn report_statistics_match_the_fold_list() {
    let data = blobs(&TRIANGLE, 20, 1.5, 6);
    let src = CodingSource::Fixed {
        coding: ova_coding(3).unwrap(),
        name: "ova".into(),
    };
    let r = cross_validate(&data, &src, &BinaryLearnerSpec::default(), Decoding::LossWeighted, 4, 9).unwrap();
    let n = r.fold_accuracies.len() as f64;
    let mean = r.fold_accuracies.iter().sum::<f64>() / n;
    let var = r.fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    assert!((r.mean - mean).abs() <= 1e-12);
    assert!((r.std - var.sqrt()).abs() <= 1e-12);
    let correct = r.predictions.iter().filter(|p| p.truth == p.predicted).count();
    assert!((correct as f64 / data.len() as f64 - mean).abs() < 1e-12);
}

#[test]
fn same_seed_same_report() {
    let data = generate_toy(&ToyOptions {
        k: 5,
        per_class: 20,
        ..ToyOptions::default()
    })
    .unwrap();
    let src = CodingSource::Ecf {
        policy: AllocationPolicy::Hard,
        length: LengthChoice::Auto,
        min_distance: 1,
        seed: 4,
    };
    let spec = BinaryLearnerSpec::default();
    let a = cross_validate(&data, &src, &spec, Decoding::Hamming, 5, 3).unwrap();
    let b = cross_validate(&data, &src, &spec, Decoding::Hamming, 5, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn leave_one_out_on_two_classes() {
    let x = DMatrix::from_column_slice(6, 1, &[-1.1, -1.0, -0.9, 0.9, 1.0, 1.1]);
    let data = LabeledDataset::new(x, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
    let src = CodingSource::Fixed {
        coding: ova_coding(2).unwrap(),
        name: "ova".into(),
    };
    let r = cross_validate(&data, &src, &BinaryLearnerSpec::default(), Decoding::Hamming, 6, 0).unwrap();
    assert_eq!(r.fold_accuracies.len(), 6);
    assert!(r.fold_accuracies.iter().all(|a| *a == 0.0 || *a == 1.0));
    assert_eq!(r.mean, 1.0);
}

#[test]
fn undersized_class_is_rejected() {
    let x = DMatrix::from_column_slice(7, 1, &[0.0, 0.1, 0.2, 0.3, 5.0, 5.1, 5.2]);
    let data = LabeledDataset::new(x, vec![0, 0, 0, 0, 1, 1, 1], 2).unwrap();
    let src = CodingSource::Fixed {
        coding: ova_coding(2).unwrap(),
        name: "ova".into(),
    };
    assert!(cross_validate(&data, &src, &BinaryLearnerSpec::default(), Decoding::Hamming, 4, 0).is_err());
}

#[test]
fn folds_are_stratified_within_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let labels: Vec<usize> = (0..137).map(|_| rng.random_range(0..4)).collect();
    let folds = 5;
    let assignment = stratified_folds(&labels, folds, 77).unwrap();
    for c in 0..4 {
        let mut counts = vec![0usize; folds];
        for (i, &y) in labels.iter().enumerate() {
            if y == c {
                counts[assignment[i]] += 1;
            }
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "class {c}: {counts:?}");
    }
}

#[test]
fn fold_codings_and_scaling_come_from_training_rows_only() {
    let data = generate_toy(&ToyOptions {
        k: 5,
        per_class: 25,
        ..ToyOptions::default()
    })
    .unwrap();
    let assignment = stratified_folds(data.labels(), 5, 2).unwrap();
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != 0).collect();
    let train = data.subset(&train_idx).unwrap();

    let src = CodingSource::Ecf {
        policy: AllocationPolicy::Hard,
        length: LengthChoice::Auto,
        min_distance: 1,
        seed: 6,
    };
    let dd = design_from_data(&train, AllocationPolicy::Hard, LengthChoice::Auto).unwrap();
    let p = make_policy(5, dd.l, 1).unwrap();
    let opts = EcfOptions {
        seed: 6,
        ..EcfOptions::default()
    };
    let expected = factorize(&dd.design, &p, dd.l, &opts).unwrap().coding;
    assert_eq!(src.build(&train).unwrap(), expected);

    let labels: Vec<i8> = train.labels().iter().map(|&c| if c < 2 { 1 } else { -1 }).collect();
    let model = fit_binary(&BinaryLearnerSpec::default(), train.features(), &labels).unwrap();
    let means: Vec<f64> = train.features().column_iter().map(|c| c.mean()).collect();
    assert!(model.transform(&means).amax() < 1e-12);
}
