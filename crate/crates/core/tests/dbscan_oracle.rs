mod common;

use common::{brute_force_dbscan as brute_force, random_blob_scene as scene, same_up_to_permutation};
use pointpair::ppm::{dbscan, DbscanParams, NOISE};
use pointpair::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_brute_force_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = DbscanParams::default();
    let mut clustered = 0;
    for _ in 0..100 {
        let pts = scene(&mut rng);
        let (labels, count) = dbscan(&pts, &params);
        let oracle = brute_force(&pts, params.eps, params.min_pts);
        assert!(same_up_to_permutation(&labels, &oracle));
        assert_eq!(count as i32, oracle.iter().copied().max().unwrap_or(NOISE) + 1);
        clustered += count;
    }
    assert!(clustered > 100, "scenes should actually contain clusters");
}

#[test]
fn matches_brute_force_with_other_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (eps, min_pts) in [(0.3, 4), (1.0, 25), (0.5, 1)] {
        let params = DbscanParams { eps, min_pts };
        for _ in 0..10 {
            let pts = scene(&mut rng);
            assert!(same_up_to_permutation(&dbscan(&pts, &params).0, &brute_force(&pts, eps, min_pts)));
        }
    }
}

#[test]
fn points_exactly_eps_apart_are_neighbours() {
    // Two points 0.5 m apart with min_pts = 2 form a cluster.
    let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(0.5, 0.0, 0.0)];
    let (labels, count) = dbscan(&pts, &DbscanParams { eps: 0.5, min_pts: 2 });
    assert_eq!((labels, count), (vec![0, 0], 1));
}
