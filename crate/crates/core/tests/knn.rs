use mepol_core::knn::{sphere_volume, NeighborIndex, PointSet};
use proptest::prelude::*;

/// O(N²) scan: every other point sorted by (squared distance, index).
fn brute_force(points: &[Vec<f64>], k: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut indices = Vec::new();
    let mut radii = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, q)| {
                let mut d2 = 0.0;
                for (a, b) in p.iter().zip(q) {
                    d2 += (a - b) * (a - b);
                }
                (d2, j)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        indices.push(all[..k].iter().map(|x| x.1).collect());
        radii.push(all[k - 1].0.sqrt());
    }
    (indices, radii)
}

fn point_cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..=10, 2usize..=500, any::<bool>()).prop_flat_map(|(p, n, lattice)| {
        let coord = if lattice {
            // small integer lattice: many exact ties and duplicates
            (0i32..4).prop_map(f64::from).boxed()
        } else {
            (-10.0f64..10.0).boxed()
        };
        let points = prop::collection::vec(prop::collection::vec(coord, p), n);
        (points, 1usize..=(n - 1).min(16))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force_exactly((points, k) in point_cloud()) {
        let index = NeighborIndex::build(PointSet::from_rows(&points).unwrap()).unwrap();
        let result = index.knn_all(k).unwrap();
        let (indices, radii) = brute_force(&points, k);
        for i in 0..points.len() {
            prop_assert_eq!(result.neighbors(i), &indices[i][..]);
            prop_assert_eq!(result.radius(i).to_bits(), radii[i].to_bits());
        }
    }

    #[test]
    fn rebuilding_is_bitwise_identical((points, k) in point_cloud()) {
        let a = NeighborIndex::build(PointSet::from_rows(&points).unwrap()).unwrap().knn_all(k).unwrap();
        let b = NeighborIndex::build(PointSet::from_rows(&points).unwrap()).unwrap().knn_all(k).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn volume_increases_with_radius(p in 1usize..20, r in 0.01f64..10.0, dr in 0.001f64..1.0) {
        prop_assert!(sphere_volume(r + dr, p) > sphere_volume(r, p));
    }
}

#[test]
fn thousand_uniform_points_have_distinct_neighbors() {
    use rand::Rng;
    let mut rng = mepol_core::rng::stream_rng(42, 0);
    let pts: Vec<[f64; 2]> = (0..1000).map(|_| [rng.random(), rng.random()]).collect();
    let result = NeighborIndex::build(PointSet::from_rows(&pts).unwrap()).unwrap().knn_all(4).unwrap();
    for i in 0..1000 {
        let nb = result.neighbors(i);
        assert_eq!(nb.len(), 4);
        assert!(!nb.contains(&i));
        let mut sorted = nb.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }
}
