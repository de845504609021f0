use berngrad::estimators::{exact_gradient, EndpointPolicy, EstimatorKind};
use berngrad::objectives::{p1, p2, Objective, TableObjective};
use berngrad::rng::{Purpose, RngStream};
use berngrad::types::{BinaryVec, ThetaVec};
use berngrad::variance::{analytic_var_disarm_separable, mc_variance, mc_variance_averaged, VarianceReport};
use proptest::prelude::*;

const ALL: [EstimatorKind; 9] = [
    EstimatorKind::Exact,
    EstimatorKind::Reinforce,
    EstimatorKind::Arm,
    EstimatorKind::Disarm,
    EstimatorKind::ReinforceLoo,
    EstimatorKind::Bitflip1,
    EstimatorKind::BitflipK,
    EstimatorKind::Ugc { tau: 0.2 },
    EstimatorKind::Tugc,
];

fn random_theta(k: usize, seed: u64) -> ThetaVec {
    let mut g = RngStream::new(seed).fork(Purpose::Init).generator();
    ThetaVec::new((0..k).map(|_| g.uniform_range(0.05, 0.95)).collect()).unwrap()
}

fn random_table(k: usize, seed: u64) -> TableObjective {
    let mut g = RngStream::new(seed).fork(Purpose::Data).generator();
    TableObjective::new(k, (0..1 << k).map(|_| g.uniform_range(-2.0, 2.0)).collect())
}

fn check_unbiased(f: &dyn Objective, theta: &ThetaVec, n: usize, seed: u64) {
    let exact = exact_gradient(f, theta).unwrap().g;
    for est in ALL {
        let rep = mc_variance(f, theta, &est, n, &RngStream::new(seed)).unwrap();
        for (j, (&m, se)) in rep.mean.iter().zip(rep.mean_se()).enumerate() {
            let tol = (4.0 * se).max(1e-9);
            assert!(
                (m - exact[j]).abs() <= tol,
                "{est} coord {j}: mean {m} exact {} se {se}",
                exact[j]
            );
        }
    }
}

#[test]
fn unbiased_on_p1() {
    check_unbiased(&p1(5, 0.499), &random_theta(5, 1), 50_000, 11);
}

#[test]
fn unbiased_on_p2() {
    check_unbiased(&p2(6, 0.499), &random_theta(6, 2), 50_000, 12);
}

#[test]
fn unbiased_on_random_table() {
    check_unbiased(&random_table(5, 3), &random_theta(5, 3), 50_000, 13);
}

fn margin(a: &VarianceReport, b: &VarianceReport, j: usize, z: f64) -> f64 {
    z * (a.var_se[j].powi(2) + b.var_se[j].powi(2)).sqrt()
}

#[test]
fn disarm_dominates_arm() {
    let f = p2(6, 0.499);
    for (i, th) in [0.05, 0.2, 0.5, 0.8].iter().enumerate() {
        let mut v = random_theta(6, 20 + i as u64).into_inner();
        v[0] = *th;
        let theta = ThetaVec::new(v).unwrap();
        let s = RngStream::new(30 + i as u64);
        let d = mc_variance(&f, &theta, &EstimatorKind::Disarm, 20_000, &s).unwrap();
        let a = mc_variance(&f, &theta, &EstimatorKind::Arm, 20_000, &s).unwrap();
        for j in 0..6 {
            assert!(d.raw[j] <= a.raw[j] + margin(&d, &a, j, 3.0), "theta0={th} coord {j}");
        }
    }
}

#[test]
fn bitflip1_wins_near_the_boundary_on_p1() {
    let k = 20;
    let mut v = random_theta(k, 40).into_inner();
    v[..5].copy_from_slice(&[0.01, 0.02, 0.025, 0.99, 0.98]);
    let theta = ThetaVec::new(v).unwrap();
    let f = p1(k, 0.499);
    let s = RngStream::new(41);
    let b = mc_variance(&f, &theta, &EstimatorKind::Bitflip1, 20_000, &s).unwrap();
    for other in [EstimatorKind::Disarm, EstimatorKind::ReinforceLoo] {
        let o = mc_variance(&f, &theta, &other, 20_000, &s).unwrap();
        for j in 0..5 {
            assert!(b.raw[j] <= o.raw[j] + margin(&b, &o, j, 3.0), "{other} coord {j}");
        }
    }
}

#[test]
fn ugc_dominates_disarm_on_p1_slices() {
    let k = 8;
    let f = p1(k, 0.499);
    let tau = 1.0 / (2.0 * k as f64);
    for (i, edge) in [0.01, 0.06, 0.5, 0.97].iter().enumerate() {
        let mut v = random_theta(k, 50 + i as u64).into_inner();
        v[0] = *edge;
        v[1] = 1.0 - *edge;
        let theta = ThetaVec::new(v).unwrap();
        let s = RngStream::new(60 + i as u64);
        let u = mc_variance(&f, &theta, &EstimatorKind::Ugc { tau }, 20_000, &s).unwrap();
        let d = mc_variance(&f, &theta, &EstimatorKind::Disarm, 20_000, &s).unwrap();
        for j in 0..k {
            assert!(u.raw[j] <= d.raw[j] + 3.0 * d.var_se[j], "edge {edge} coord {j}");
        }
    }
}

#[test]
fn bitflip_k_beats_k_sample_averages() {
    let k = 6;
    let f = p1(k, 0.3);
    let theta = ThetaVec::new(vec![0.02, 0.05, 0.97, 0.5, 0.1, 0.9]).unwrap();
    let s = RngStream::new(70);
    let n = 4_000;
    let bk = mc_variance_averaged(&f, &theta, &EstimatorKind::BitflipK, 1, n, &s, EndpointPolicy::Reject).unwrap();
    for other in [EstimatorKind::Disarm, EstimatorKind::ReinforceLoo, EstimatorKind::Reinforce] {
        let avg = mc_variance_averaged(&f, &theta, &other, k, n, &s, EndpointPolicy::Reject).unwrap();
        for j in 0..k {
            assert!(bk.raw[j] <= avg.raw[j] + margin(&bk, &avg, j, 3.0), "{other} coord {j}");
        }
    }
}

// Quadruples satisfying the hypothesis: w and w~ differ on a subset of the
// coordinates where z and z~ differ, and agree with z elsewhere.
fn quadruple(k: usize, bits: &[bool], keep: &[bool]) -> (BinaryVec, BinaryVec, BinaryVec, BinaryVec) {
    let z = BinaryVec::new(bits[..k].to_vec());
    let zt = BinaryVec::new(bits[k..2 * k].to_vec());
    let w = z.clone();
    let mut wt = z.clone();
    for j in 0..k {
        if z.get(j) != zt.get(j) && keep[j] {
            wt.set(j, zt.get(j));
        }
    }
    (z, zt, w, wt)
}

proptest! {
    #[test]
    fn separable_minmax_variance_floor(
        th in prop::collection::vec(0.01f64..0.99, 2..30),
        delta in 0.1f64..3.0,
    ) {
        let k = th.len();
        let theta = ThetaVec::new(th).unwrap();
        let worst = (0..k)
            .map(|j| analytic_var_disarm_separable(&theta, j, delta).unwrap())
            .fold(f64::MIN, f64::max);
        prop_assert!(worst >= (k as f64 - 1.0) * delta * delta * (1.0 - 1e-12));
    }

    #[test]
    fn continuity_holds_on_p1_for_one_directional_pairs(
        k in 1usize..12,
        bits in prop::collection::vec(any::<bool>(), 24),
        keep in prop::collection::vec(any::<bool>(), 12),
        t in 0.0f64..1.0,
    ) {
        // force z >= z~ coordinatewise so no differences cancel
        let mut b = bits.clone();
        for j in 0..k {
            b[k + j] = b[j] && b[k + j];
        }
        let (z, zt, w, wt) = quadruple(k, &b, &keep);
        let f = p1(k, t);
        prop_assert!((f.eval(&w) - f.eval(&wt)).abs() <= (f.eval(&z) - f.eval(&zt)).abs() + 1e-12);
    }
}

#[test]
fn continuity_can_fail_on_p1_when_differences_cancel() {
    let f = p1(2, 0.2);
    let (z, zt, w, wt) = quadruple(2, &[true, false, false, true], &[true, false]);
    assert_eq!(f.eval(&z) - f.eval(&zt), 0.0);
    assert!((f.eval(&w) - f.eval(&wt)).abs() > 0.5);
}
