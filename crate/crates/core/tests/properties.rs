use proptest::prelude::*;

use ste_core::collapse::{collapse_ste, verify_collapse};
use ste_core::data::{normalize, split, FeatureStats};
use ste_core::layers::{Activation, BranchMasks, DenseLayer, MaskSet, Noise, SteLayer};
use ste_core::random::{bernoulli_mask, bernoulli_vector};
use ste_core::tensor::affine;
use ste_core::{Checkpoint, Dataset, Matrix, Model, ModelSpec, Regularization, Rng, Vector};

fn noise_strategy() -> impl Strategy<Value = Noise> {
    prop_oneof![Just(Noise::Dropout), Just(Noise::DropConnect)]
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn random_vector(n: usize, rng: &mut Rng) -> Vector {
    Vector::from_vec((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_is_linear_in_x(n in 1usize..8, m in 1usize..8, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let w = random_matrix(n, m, &mut rng);
        let zero = Vector::zeros(n);
        let (x, y) = (random_vector(m, &mut rng), random_vector(m, &mut rng));
        let combo: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = affine(&w, &combo, &zero).unwrap();
        let (wx, wy) = (affine(&w, &x, &zero).unwrap(), affine(&w, &y, &zero).unwrap());
        let rhs: Vec<f64> = wx.iter().zip(wy.iter()).map(|(a, b)| alpha * a + beta * b).collect();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn branch_order_does_not_matter(
        n in 1usize..6, m in 1usize..6, a in 2usize..5, noise in noise_strategy(), keep in 0.1f64..1.0, seed: u64,
    ) {
        let layer = SteLayer::init(m, n, a, keep, noise, Activation::Relu, Some(0.5), 0, seed).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let x = random_vector(m, &mut rng);
        let masks = layer.sample_masks(0, 0, seed);

        let mut rev = layer.clone();
        rev.weights.reverse();
        rev.biases.reverse();
        let branches = match &masks.branches {
            BranchMasks::Dropout(v) => BranchMasks::Dropout(v.iter().rev().cloned().collect()),
            BranchMasks::DropConnect(v) => BranchMasks::DropConnect(v.iter().rev().cloned().collect()),
            BranchMasks::None => unreachable!(),
        };
        let rev_masks = MaskSet { branches, output: masks.output.clone() };

        let (y, _) = layer.forward_train(&x, &masks).unwrap();
        let (y_rev, _) = rev.forward_train(&x, &rev_masks).unwrap();
        prop_assert!(close(&y, &y_rev, 1e-12));
        prop_assert!(close(&layer.forward_eval(&x).unwrap(), &rev.forward_eval(&x).unwrap(), 1e-12));
    }

    #[test]
    fn single_branch_ste_dropout_is_dense_dropout(n in 1usize..10, m in 1usize..10, keep in 0.1f64..1.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let (w, b) = (random_matrix(n, m, &mut rng), random_vector(n, &mut rng));
        let x = random_vector(m, &mut rng);
        let mask = bernoulli_vector(n, keep, &mut rng).unwrap();
        let ste = SteLayer::new(vec![w.clone()], vec![b.clone()], keep, Noise::Dropout, Activation::Relu, None).unwrap();
        let dense = DenseLayer::new(w, b, Activation::Relu, Some(keep)).unwrap();
        let masks = MaskSet { branches: BranchMasks::Dropout(vec![mask.clone()]), output: None };
        let (y_ste, _) = ste.forward_train(&x, &masks).unwrap();
        let (y_dense, _) = dense.forward_train(&x, Some(&mask)).unwrap();
        prop_assert_eq!(y_ste.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y_dense.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn single_branch_ste_dropconnect_is_dropconnect(n in 1usize..10, m in 1usize..10, keep in 0.1f64..1.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let (w, b) = (random_matrix(n, m, &mut rng), random_vector(n, &mut rng));
        let x = random_vector(m, &mut rng);
        let mask = bernoulli_mask(n, m, keep, &mut rng).unwrap();
        let ste = SteLayer::new(vec![w.clone()], vec![b.clone()], keep, Noise::DropConnect, Activation::Relu, None).unwrap();
        let masks = MaskSet { branches: BranchMasks::DropConnect(vec![mask.clone()]), output: None };
        let (y_ste, _) = ste.forward_train(&x, &masks).unwrap();
        let reference = Activation::Relu.apply(&affine(&mask.hadamard(&w).unwrap(), &x, &b).unwrap());
        prop_assert_eq!(y_ste.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), reference.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn collapse_matches_eval_forward(
        n in 1usize..24, m in 1usize..24, a in 1usize..9, noise in noise_strategy(),
        keep in 0.05f64..1.0, out_keep in proptest::option::of(0.1f64..1.0), seed: u64,
    ) {
        let mut layer = SteLayer::init(m, n, a, keep, noise, Activation::Relu, out_keep, 1, seed).unwrap();
        let mut rng = Rng::new(seed);
        for b in layer.biases.iter_mut() {
            *b = random_vector(n, &mut rng);
        }
        let report = verify_collapse(&layer, &collapse_ste(&layer), 20, 1e-9, &mut rng).unwrap();
        prop_assert!(report.passed, "{}", report);
    }

    #[test]
    fn split_is_a_partition(n in 1usize..300, frac in 0.01f64..0.99, seed: u64) {
        let features = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let ds = Dataset::new(features, (0..n).map(|i| i % 3).collect()).unwrap();
        let (train, val) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(val.len(), (n as f64 * frac).floor() as usize);
        let mut ids: Vec<usize> = (0..train.len()).map(|i| train.example(i).0[0]).chain((0..val.len()).map(|i| val.example(i).0[0])).map(|v| v as usize).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        for d in [&train, &val] {
            for i in 0..d.len() {
                let (x, label) = d.example(i);
                prop_assert_eq!(label, x[0] as usize % 3);
            }
        }
    }

    #[test]
    fn normalized_train_split_is_standardized(rows in 2usize..60, cols in 1usize..6, scale in 0.01f64..1e3, seed: u64) {
        let mut rng = Rng::new(seed);
        let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-scale, scale) + 7.0).collect();
        // last column constant
        for r in 0..rows {
            data[r * cols + cols - 1] = 4.25;
        }
        let mut train = Dataset::new(Matrix::from_vec(rows, cols, data).unwrap(), vec![0; rows]).unwrap();
        normalize(&mut train, &mut []).unwrap();
        let stats = FeatureStats::compute(&train.features);
        for c in 0..cols {
            prop_assert!(stats.mean[c].abs() < 1e-9, "mean {}", stats.mean[c]);
            if c + 1 < cols {
                prop_assert!((stats.std[c] - 1.0).abs() < 1e-9, "std {}", stats.std[c]);
            }
        }
        prop_assert!(train.features.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        hidden in 1usize..6, a in 1usize..4, reg_idx in 0usize..4, epoch: u64, val_loss: f64, seed: u64,
    ) {
        let spec = ModelSpec::mlp(3, &[hidden, hidden], 2, Regularization::ALL[reg_idx], a, 0.5);
        let model = Model::init(&spec, seed).unwrap();
        let ckpt = Checkpoint { model, opt: None, epoch, val_loss, seed };
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
        let bits = |c: &Checkpoint| c.model.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&ckpt));
        prop_assert_eq!(back.val_loss.to_bits(), val_loss.to_bits());
    }
}
