use crust_core::data::{generate_clusterable, SyntheticSpec};
use crust_core::model::{nearest_class, MlpModel};
use crust_core::numerics::{Matrix, Rng};
use crust_core::oracle;
use crust_core::{CrustError, NoisyDataset};

fn random_model(dims: &[usize], seed: u64) -> MlpModel {
    MlpModel::init(dims, &mut Rng::new(seed), 1.0).unwrap()
}

fn random_input(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

#[test]
fn zero_scale_gives_zero_model() {
    let m = MlpModel::init(&[4, 8, 1], &mut Rng::new(0), 0.0).unwrap();
    assert!(m.params().iter().all(|&w| w == 0.0));
    assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.0);
}

#[test]
fn init_is_seeded() {
    assert_eq!(random_model(&[3, 5, 1], 9), random_model(&[3, 5, 1], 9));
    assert_ne!(random_model(&[3, 5, 1], 9), random_model(&[3, 5, 1], 10));
}

#[test]
fn init_variance_matches_fan_in() {
    let mut rng = Rng::new(4);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for _ in 0..10 {
        let m = MlpModel::init(&[4, 8, 1], &mut rng, 1.0).unwrap();
        first.extend_from_slice(m.weights()[0].data());
        second.extend_from_slice(m.weights()[1].data());
    }
    let var = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    assert!((var(&first) / 0.25 - 1.0).abs() < 0.2, "{}", var(&first));
    assert!((var(&second) / 0.125 - 1.0).abs() < 0.2, "{}", var(&second));
}

#[test]
fn bad_architectures_rejected() {
    let mut rng = Rng::new(0);
    assert!(matches!(MlpModel::init(&[3], &mut rng, 1.0), Err(CrustError::InvalidArchitecture(_))));
    assert!(MlpModel::init(&[3, 4, 2], &mut rng, 1.0).is_err());
    assert!(MlpModel::init(&[3, 0, 1], &mut rng, 1.0).is_err());
}

#[test]
fn linear_model_closed_forms() {
    let w = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
    let m = MlpModel::from_weights(vec![w]).unwrap();
    let x = [1.0, 2.0, 3.0];
    assert_eq!(m.forward(&x).unwrap(), 4.5);
    assert_eq!(m.jacobian_row(&x).unwrap(), x.to_vec());
    let g = m.per_example_gradient(0, &x, 1.5).unwrap();
    assert_eq!(g.residual, 3.0);
    assert_eq!(g.gradient, vec![3.0, 6.0, 9.0]);
    assert_eq!(m.gradient_feature(&x, 1.5).unwrap(), vec![1.5, -3.0, 6.0]);
}

#[test]
fn two_layer_feature_closed_form() {
    let m = random_model(&[3, 4, 1], 2);
    let x = [0.2, -0.4, 1.0];
    let y = 0.3;
    let w1 = &m.weights()[0];
    let w2 = &m.weights()[1];
    let z = w1.matvec(&x).unwrap();
    let r = m.forward(&x).unwrap() - y;
    let expected: Vec<f64> = (0..4).map(|i| r * w2[(0, i)] * (1.0 - z[i].tanh().powi(2))).collect();
    let g = m.gradient_feature(&x, y).unwrap();
    assert!(oracle::max_relative_error(&g, &expected) < 1e-14);
}

#[test]
fn zero_residual_means_zero_gradient() {
    let m = random_model(&[3, 6, 1], 5);
    let x = [0.1, 0.2, -0.3];
    let y = m.forward(&x).unwrap();
    assert!(m.per_example_gradient(0, &x, y).unwrap().gradient.iter().all(|&v| v == 0.0));
    assert!(m.gradient_feature(&x, y).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_matches_reference_and_permutation() {
    let mut rng = Rng::new(6);
    let m = random_model(&[5, 7, 3, 1], 6);
    let x = random_input(5, &mut rng);
    let out = m.forward(&x).unwrap();
    assert!((out - oracle::reference_forward(m.weights(), &x)).abs() < 1e-14);

    let perm = [3, 0, 4, 1, 2];
    let xp: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
    let mut w = m.weights().to_vec();
    w[0] = Matrix::from_fn(7, 5, |r, c| m.weights()[0][(r, perm[c])]);
    let mp = MlpModel::from_weights(w).unwrap();
    assert_eq!(mp.forward(&xp).unwrap(), out);
}

#[test]
fn jacobian_times_residual_is_gradient() {
    let mut rng = Rng::new(8);
    let m = random_model(&[4, 6, 5, 1], 8);
    let x = random_input(4, &mut rng);
    let g = m.per_example_gradient(0, &x, 0.7).unwrap();
    let j = m.jacobian_row(&x).unwrap();
    let jr: Vec<f64> = j.iter().map(|v| v * g.residual).collect();
    assert!(oracle::max_relative_error(&jr, &g.gradient) < 1e-12);
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = Rng::new(10);
    for dims in [&[3usize, 5, 4, 1][..], &[6, 3, 1], &[2, 4, 4, 4, 1]] {
        let m = MlpModel::init(dims, &mut rng, 1.5).unwrap();
        let x = random_input(dims[0], &mut rng);
        let y = rng.normal();
        let g = m.per_example_gradient(0, &x, y).unwrap().gradient;
        assert!(oracle::max_relative_error(&g, &oracle::finite_difference_gradient(&m, &x, y, 1e-6)) <= 1e-5);
        let j = m.jacobian_row(&x).unwrap();
        assert!(oracle::max_relative_error(&j, &oracle::finite_difference_jacobian_row(&m, &x, 1e-6)) <= 1e-5);
        let f = m.gradient_feature(&x, y).unwrap();
        assert!(oracle::max_relative_error(&f, &oracle::finite_difference_feature(&m, &x, y, 1e-6)) <= 1e-5);
    }
}

fn small_dataset() -> NoisyDataset {
    generate_clusterable(&SyntheticSpec {
        n: 30,
        d: 4,
        num_clusters: 3,
        num_classes: 3,
        cluster_separation: 3.0,
        within_cluster_std: 0.5,
        seed: 1,
    })
    .unwrap()
}

#[test]
fn loss_examples() {
    let zero = MlpModel::init(&[4, 3, 1], &mut Rng::new(0), 0.0).unwrap();
    let x = Matrix::zeros(10, 4);
    let ds = NoisyDataset::clean(x, vec![1.0; 10], vec![-1.0, 1.0]).unwrap();
    let all: Vec<usize> = (0..10).collect();
    assert_eq!(zero.loss(&ds, &all).unwrap().value, 5.0);
    let empty = zero.loss(&ds, &[]).unwrap();
    assert!(empty.empty_subset && empty.value == 0.0);

    let ds = small_dataset();
    let m = random_model(&[4, 6, 1], 3);
    let subset = [0, 4, 9, 17];
    let naive: f64 = subset
        .iter()
        .map(|&i| 0.5 * (oracle::reference_forward(m.weights(), ds.x.row(i)) - ds.y_observed[i]).powi(2))
        .sum();
    assert!((m.loss(&ds, &subset).unwrap().value - naive).abs() < 1e-12);
    assert!(m.loss(&ds, &[99]).is_err());
}

#[test]
fn prediction_examples() {
    assert_eq!(nearest_class(0.9, &[-1.0, 1.0]), 1);
    assert_eq!(nearest_class(0.0, &[-1.0, 1.0]), 0);
    assert_eq!(nearest_class(0.0, &[1.0, -1.0]), 0);

    let ds = small_dataset();
    let m = random_model(&[4, 6, 1], 4);
    for i in 0..ds.len() {
        let f = m.forward(ds.x.row(i)).unwrap();
        let mut best = 0;
        for (c, v) in ds.class_values.iter().enumerate() {
            if (f - v).abs() < (f - ds.class_values[best]).abs() {
                best = c;
            }
        }
        assert_eq!(m.predict_class(ds.x.row(i), &ds.class_values).unwrap(), best);
    }
}

#[test]
fn jacobian_budget_is_enforced() {
    let m = random_model(&[2, 100, 1], 0);
    let x = Matrix::zeros(400_000, 2);
    let idx: Vec<usize> = (0..x.rows()).collect();
    assert!(matches!(m.jacobian_rows_of(&x, &idx), Err(CrustError::Resource(_))));
}

#[test]
fn checkpoint_round_trip() {
    let m = random_model(&[3, 5, 2, 1], 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    m.save(&path).unwrap();
    assert_eq!(MlpModel::load(&path).unwrap(), m);
    assert!(MlpModel::from_text("# crust model v1\nlayer_dims=3,1\n").is_err());
}

#[test]
fn input_dimension_checked() {
    let m = random_model(&[3, 5, 1], 0);
    assert!(matches!(m.forward(&[1.0, 2.0]), Err(CrustError::DimensionMismatch { .. })));
    assert!(m.forward(&[1.0, f64::NAN, 0.0]).is_err());
}
