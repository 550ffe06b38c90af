use crust_core::numerics::{pairwise_sq_dists, singular_values, svd, Matrix, Rng};
use crust_core::oracle::naive_distances;

fn max_abs(m: &Matrix) -> f64 {
    m.data().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn identity_has_unit_spectrum() {
    assert_eq!(singular_values(&Matrix::identity(3)).unwrap(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn outer_product_spectrum() {
    // |u| = 2, |v| = 3
    let u = [2.0, 0.0, 0.0, 0.0];
    let v = [0.0, 3.0, 0.0];
    let a = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
    let s = singular_values(&a).unwrap();
    assert!((s[0] - 6.0).abs() < 1e-12);
    assert!(s[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn random_five_by_four_reconstructs() {
    let mut rng = Rng::new(7);
    let a = Matrix::from_fn(5, 4, |_, _| rng.normal());
    let s = svd(&a).unwrap();
    assert!(max_abs(&s.reconstruct().sub(&a).unwrap()) < 1e-10);
}

#[test]
fn large_square_is_accurate() {
    let mut rng = Rng::new(200);
    let a = Matrix::from_fn(200, 200, |_, _| rng.normal());
    let s = svd(&a).unwrap();
    let rel = s.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
    assert!(rel < 1e-9, "{rel}");
    let utu = s.u.transpose().matmul(&s.u).unwrap();
    assert!(max_abs(&utu.sub(&Matrix::identity(200)).unwrap()) < 1e-9);
    assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn rank_deficient_completes_u() {
    let mut rng = Rng::new(3);
    let b = Matrix::from_fn(8, 2, |_, _| rng.normal());
    let c = Matrix::from_fn(2, 6, |_, _| rng.normal());
    let a = b.matmul(&c).unwrap();
    let s = svd(&a).unwrap();
    assert_eq!(s.sigma.iter().filter(|&&x| x > 0.0).count(), 2);
    let utu = s.u.transpose().matmul(&s.u).unwrap();
    assert!(max_abs(&utu.sub(&Matrix::identity(s.sigma.len())).unwrap()) < 1e-10);
}

#[test]
fn empty_and_nonfinite_rejected() {
    assert!(svd(&Matrix::zeros(0, 3)).is_err());
    let mut a = Matrix::zeros(2, 2);
    a[(1, 1)] = f64::INFINITY;
    assert!(svd(&a).is_err());
}

#[test]
fn beta_one_is_uniform() {
    let mut rng = Rng::new(1).substream("beta");
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| rng.beta_sample(1.0).unwrap()).collect();
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS statistic {ks}");
}

#[test]
fn beta_large_alpha_concentrates() {
    let mut rng = Rng::new(2);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.beta_sample(1e4).unwrap()).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    assert!(std < 0.01, "{std}");
    assert!((mean - 0.5).abs() < 0.01);
}

#[test]
fn beta_half_is_symmetric() {
    let mut rng = Rng::new(42);
    let mean = (0..100_000).map(|_| rng.beta_sample(0.5).unwrap()).sum::<f64>() / 1e5;
    assert!((0.49..=0.51).contains(&mean), "{mean}");
}

#[test]
fn beta_rejects_bad_shape() {
    let mut rng = Rng::new(0);
    assert!(rng.beta_sample(0.0).is_err());
    assert!(rng.beta_sample(f64::NAN).is_err());
}

#[test]
fn substreams_are_positional_independent() {
    let root = Rng::new(5);
    let mut consumed = root.clone();
    for _ in 0..100 {
        consumed.next_u64();
    }
    let a: Vec<u64> = (0..4).map({
        let mut s = root.substream("x");
        move |_| s.next_u64()
    }).collect();
    let b: Vec<u64> = (0..4).map({
        let mut s = consumed.substream("x");
        move |_| s.next_u64()
    }).collect();
    assert_eq!(a, b);
    let mut other = root.substream("y");
    assert_ne!(a[0], other.next_u64());
    let mut i0 = root.substream_indexed("c", 0);
    let mut i1 = root.substream_indexed("c", 1);
    assert_ne!(i0.next_u64(), i1.next_u64());
}

#[test]
fn index_is_uniform_enough() {
    let mut rng = Rng::new(9);
    let mut counts = [0usize; 7];
    for _ in 0..70_000 {
        counts[rng.index(7)] += 1;
    }
    assert!(counts.iter().all(|&c| (9_500..=10_500).contains(&c)), "{counts:?}");
}

#[test]
fn pairwise_distance_examples() {
    let f = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [3.0, 4.0]]).unwrap();
    let d = pairwise_sq_dists(&f).unwrap();
    assert_eq!(d[(0, 1)], 0.0);
    assert_eq!(d[(2, 3)], 25.0);

    let mut rng = Rng::new(1);
    let f = Matrix::from_fn(6, 3, |_, _| rng.normal());
    let d = pairwise_sq_dists(&f).unwrap();
    let naive = naive_distances(&f);
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(d[(i, j)].sqrt(), naive[(i, j)]);
        }
    }
}
