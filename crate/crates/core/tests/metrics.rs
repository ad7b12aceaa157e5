use penumbra_core::geometry::{Frame, PointCloud, Vec3};
use penumbra_core::metrics::*;
use penumbra_core::transport::PenumbraImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    PointCloud::new(pts, Frame::Scene)
}

fn reference_chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let one_way = |a: &PointCloud, b: &PointCloud| {
        let mut total = 0.0;
        for x in &a.points {
            let mut best = f64::INFINITY;
            for y in &b.points {
                let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / a.len() as f64
    };
    one_way(p, q) + one_way(q, p)
}

#[test]
fn chamfer_matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let p = cloud(&mut rng, 500);
        let q = cloud(&mut rng, 500);
        let got = chamfer(&p, &q).unwrap();
        let want = reference_chamfer(&p, &q);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn image_mse_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (13, 7);
    let a: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
    let b: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
    let mut want = 0.0;
    for i in 0..h {
        for j in 0..w {
            want += (a[i * w + j] - b[i * w + j]).powi(2);
        }
    }
    want /= (w * h) as f64;
    let ia = PenumbraImage::new(w, h, 1, a.clone()).unwrap();
    let ib = PenumbraImage::new(w, h, 1, b).unwrap();
    assert!((image_mse(&ia, &ib).unwrap() - want).abs() < 1e-12);
    assert_eq!(image_mse(&ia, &ia).unwrap(), 0.0);
    let shifted = PenumbraImage::new(w, h, 1, a.iter().map(|v| v + 0.25).collect()).unwrap();
    assert!((image_mse(&ia, &shifted).unwrap() - 0.0625).abs() < 1e-15);
    assert!(image_mse(&ia, &PenumbraImage::zeros(w, h + 1, 1)).is_err());
}

#[test]
fn sbr_regime_endpoints() {
    let s = vec![2.0; 100];
    for target in [10.0, 20.0] {
        let level = penumbra_core::transport::background_level(&s, target).unwrap();
        let got = sbr_db(&s, &vec![level; 100]).unwrap();
        assert!((got - target).abs() < 1e-12);
    }
}

#[test]
fn spearman_on_known_orderings() {
    let x = [10.0, 15.0, 20.0, 25.0, 30.0];
    let down = spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
    assert_eq!(down.rho, -1.0);
    assert_eq!(down.p_value, 0.0);
    let up = spearman(&x, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!(up.rho, 1.0);
    assert!(spearman(&x, &[1.0; 5]).is_err());
    assert!(spearman(&x[..2], &[1.0, 2.0]).is_err());

    // sum of squared rank differences is 10: rho = 1 - 60 / 336 ~ 0.821, t ~ 3.22 on 5 dof
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let b = [2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0];
    let s = spearman(&a, &b).unwrap();
    assert!((s.rho - (1.0 - 60.0 / 336.0)).abs() < 1e-12);
    assert!(s.p_value > 0.015 && s.p_value < 0.03, "p {}", s.p_value);
}

#[test]
fn report_renders_on_one_line() {
    let r = EvalReport {
        mse_2d: 1.5e-3,
        chamfer_3d: 0.02,
        voxel_iou: 0.75,
        sbr_db: 15.0,
        snr_db: f64::INFINITY,
        scene_hash: 0xabc,
        seed: 9,
    };
    r.validate().unwrap();
    let line = r.to_string();
    assert!(!line.contains('\n'));
    assert!(line.contains("scene_hash:\"0000000000000abc\""));
    assert!(line.contains("chamfer:\"squared,mean-per-cloud\""));
    assert!(EvalReport {
        voxel_iou: 1.5,
        ..r.clone()
    }
    .validate()
    .is_err());
    assert!(EvalReport {
        mse_2d: f64::NAN,
        ..r
    }
    .validate()
    .is_err());
}

fn point() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), 1..40).prop_map(|p| PointCloud::new(p, Frame::Scene))
}

proptest! {
    #[test]
    fn chamfer_is_symmetric(p in cloud_strategy(), q in cloud_strategy()) {
        let a = chamfer(&p, &q).unwrap();
        let b = chamfer(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn chamfer_ignores_shared_translation(p in cloud_strategy(), q in cloud_strategy(), d in point()) {
        let a = chamfer(&p, &q).unwrap();
        let b = chamfer(&p.translated(&d), &q.translated(&d)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn mse_is_symmetric_and_zero_on_diagonal(v in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..64)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn iou_of_itself_is_one(mut a in prop::collection::vec(any::<bool>(), 1..64)) {
        a[0] = true;
        prop_assert_eq!(voxel_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn spearman_is_rank_invariant(v in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 5..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let s = spearman(&x, &y);
        prop_assume!(s.is_ok());
        let s = s.unwrap();
        let mono: Vec<f64> = y.iter().map(|v| v.atan() + 3.0 * v).collect();
        let t = spearman(&x, &mono).unwrap();
        prop_assert!((s.rho - t.rho).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s.rho));
    }
}
