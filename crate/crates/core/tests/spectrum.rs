use crust_core::coreset::{lazy_greedy_select, DissimilarityMatrix};
use crust_core::data::{generate_clusterable, inject_symmetric_noise, SyntheticSpec};
use crust_core::numerics::{singular_values, Matrix, Rng};
use crust_core::spectrum::{cluster_subspace, energy_split, principal_cosines, report, sandwich_check, split_spectrum};
use crust_core::MlpModel;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

#[test]
fn duplicated_directions_have_a_spectral_gap() {
    let base = random(3, 7, 1);
    let j = Matrix::from_fn(9, 7, |i, c| base[(i % 3, c)] * (1.0 + (i / 3) as f64));
    let s = split_spectrum(&j, 3).unwrap();
    assert!(s.sigma[2] > 1e-6);
    assert!(s.sigma.get(3).copied().unwrap_or(0.0) < 1e-10);
    // Every row of J lies in the information space.
    let col: Vec<f64> = j.column(0);
    assert!((s.info_alignment(&col).unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn full_cutoff_leaves_no_nuisance() {
    let j = random(6, 4, 2);
    let s = split_spectrum(&j, 6).unwrap();
    assert_eq!(s.basis_info.cols(), 6);
    assert_eq!(s.basis_nuisance().cols(), 0);
    let v = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
    assert!((s.info_alignment(&v).unwrap() - 1.0).abs() < 1e-10);
    assert!(split_spectrum(&j, 0).is_err());
    assert!(split_spectrum(&j, 7).is_err());
}

#[test]
fn projectors_are_complementary() {
    let j = random(12, 5, 3);
    let s = split_spectrum(&j, 3).unwrap();
    let mut rng = Rng::new(4);
    for _ in 0..10 {
        let v: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let (pi, pn) = (s.project_info(&v), s.project_nuisance(&v));
        for i in 0..12 {
            assert!((pi[i] + pn[i] - v[i]).abs() < 1e-10);
        }
        let again = s.project_info(&pi);
        assert!(pi.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(s.project_info(&pn).iter().all(|x| x.abs() < 1e-9));
        let (ei, en) = energy_split(&s, &v);
        let total: f64 = v.iter().map(|x| x * x).sum();
        assert!((ei + en - total).abs() < 1e-9 * total);
    }
    let cross = s.basis_info.transpose().matmul(&s.basis_nuisance()).unwrap();
    assert!(cross.data().iter().all(|x| x.abs() < 1e-9));
    assert_eq!(s.info_alignment(&[0.0; 12]), None);
}

fn two_groups() -> DissimilarityMatrix {
    let mut rng = Rng::new(5);
    let f = Matrix::from_fn(12, 2, |i, _| if i < 6 { 0.0 } else { 40.0 } + rng.normal());
    DissimilarityMatrix::from_features(&f).unwrap()
}

#[test]
fn cluster_subspace_examples() {
    let dm = two_groups();
    let cs = lazy_greedy_select(&dm, 6).unwrap();

    let fine = cluster_subspace(&cs, 6, &dm).unwrap();
    assert_eq!(fine.basis, Matrix::identity(6));

    let coarse = cluster_subspace(&cs, 2, &dm).unwrap();
    assert_eq!(coarse.basis.cols(), 2);
    for part in &coarse.partition {
        let side = cs.selected[part[0]] < 6;
        assert!(part.iter().all(|&p| (cs.selected[p] < 6) == side));
    }
    let mut v = vec![0.0; 6];
    for (l, part) in coarse.partition.iter().enumerate() {
        for &p in part {
            v[p] = if l == 0 { 2.5 } else { -1.0 };
        }
    }
    let pv = coarse.project(&v);
    assert!(pv.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(cluster_subspace(&cs, 0, &dm).is_err());
    assert!(cluster_subspace(&cs, 7, &dm).is_err());
}

#[test]
fn principal_cosines_examples() {
    let e = Matrix::identity(4);
    let a = e.select_cols(&[0, 1]);
    let b = e.select_cols(&[1, 2]);
    let c = principal_cosines(&a, &b).unwrap();
    assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12);
}

#[test]
fn sandwich_holds_for_random_weights() {
    let mut rng = Rng::new(6);
    for seed in 0..20 {
        let j = random(8, 5, 100 + seed);
        let w: Vec<f64> = (0..8).map(|_| 1.0 + rng.index(20) as f64).collect();
        let (check, _, _) = sandwich_check(&j, &w).unwrap();
        assert!(check.all_hold());
    }
    let j = random(5, 7, 7);
    let (check, s, r) = sandwich_check(&j, &[1.0; 5]).unwrap();
    assert!(check.all_hold());
    assert!(s.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-12));
    assert_eq!(s, singular_values(&j).unwrap());
}

fn dataset(noise: f64) -> crust_core::NoisyDataset {
    let ds = generate_clusterable(&SyntheticSpec {
        n: 40,
        d: 4,
        num_clusters: 2,
        num_classes: 2,
        cluster_separation: 5.0,
        within_cluster_std: 0.5,
        seed: 8,
    })
    .unwrap();
    inject_symmetric_noise(&ds, noise, &mut Rng::new(8)).unwrap()
}

#[test]
fn report_on_clean_data() {
    let ds = dataset(0.0);
    let m = MlpModel::init(&[4, 6, 1], &mut Rng::new(9), 1.0).unwrap();
    let selected = [0, 5, 11, 20, 33];
    let r = report(&m, &ds, &selected, &[1.0; 5], 2, None).unwrap();
    assert_eq!(r.alignment_full.noise, None);
    assert_eq!(r.coreset_noise_fraction, 0.0);
    assert!(r.sandwich.all_hold());
    assert!(r.sigma_weighted.iter().zip(&r.sigma_coreset).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(r.beta >= r.sigma_full[0]);
    assert!(r.cluster_alignment.is_none());
    assert!(report(&m, &ds, &selected, &[1.0; 4], 2, None).is_err());
    assert!(report(&m, &ds, &[], &[], 2, None).is_err());
}

#[test]
fn report_with_noise_and_clusters() {
    let ds = dataset(0.3);
    let m = MlpModel::init(&[4, 6, 1], &mut Rng::new(10), 1.0).unwrap();
    let dm = DissimilarityMatrix::from_features(&ds.x).unwrap();
    let cs = lazy_greedy_select(&dm, 8).unwrap();
    let weights: Vec<f64> = cs.weights.iter().map(|&w| w as f64).collect();
    let cluster = cluster_subspace(&cs, 2, &dm).unwrap();
    let r = report(&m, &ds, &cs.selected, &weights, 2, Some(&cluster)).unwrap();
    assert!(r.alignment_full.noise.is_some());
    assert!(r.sandwich.all_hold());
    let cos = r.cluster_alignment.unwrap();
    assert!(cos.iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(r.cluster_noise_sup.unwrap() >= 0.0);
    let expected = cs.selected.iter().filter(|&&i| ds.noise_flags[i]).count() as f64 / 8.0;
    assert_eq!(r.coreset_noise_fraction, expected);
}
