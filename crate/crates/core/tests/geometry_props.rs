mod common;

use std::collections::{BTreeMap, VecDeque};

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::Rng;
use singular_cbf::*;

fn cube_grid(n: usize, half: f64) -> GridSpec {
    GridSpec::new(vec![GridAxis::new(-half, half, n); 3]).unwrap()
}

fn sphere_field(n: usize, half: f64) -> GridField {
    GridField::from_fn(cube_grid(n, half), |p| {
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    })
    .unwrap()
}

fn trilinear(field: &GridField, p: &Point3) -> f64 {
    let axes = &field.grid.axes;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for k in 0..3 {
        let s = (p[k] - axes[k].min) / axes[k].spacing();
        let i = (s.floor() as usize).min(axes[k].count - 2);
        base[k] = i;
        frac[k] = s - i as f64;
    }
    let mut v = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = base;
        for k in 0..3 {
            if corner >> k & 1 == 1 {
                idx[k] += 1;
                w *= frac[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if w != 0.0 {
            v += w * field.at(&idx);
        }
    }
    v
}

fn random_soup(rng: &mut StdRng, vertices: usize, triangles: usize) -> TriangleMesh {
    let points: Vec<Point3> = (0..vertices)
        .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
        .collect();
    let mut tris = Vec::new();
    while tris.len() < triangles {
        let t = [
            rng.random_range(0..vertices),
            rng.random_range(0..vertices),
            rng.random_range(0..vertices),
        ];
        let area = geometry::triangle_area(&points[t[0]], &points[t[1]], &points[t[2]]);
        if area > 1e-4 {
            tris.push(t);
        }
    }
    let mut used: Vec<usize> = tris.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    TriangleMesh::new(
        used.iter().map(|v| points[*v]).collect(),
        tris.iter().map(|t| t.map(|v| remap[&v])).collect(),
    )
    .unwrap()
}

#[test]
fn bvh_matches_brute_force_on_random_queries() {
    let mut rng = common::rng(51);
    let mesh = random_soup(&mut rng, 200, 400);
    for _ in 0..1000 {
        let q = Point3::new(
            rng.random_range(-0.5..1.5),
            rng.random_range(-0.5..1.5),
            rng.random_range(-0.5..1.5),
        );
        for c in 0..mesh.component_count() {
            let fast = closest_point_on_mesh(&mesh, c, &q).unwrap();
            let slow = mesh.closest_point_brute_force(c, &q).unwrap();
            assert_eq!(fast.triangle, slow.triangle);
            assert!((fast.point - slow.point).amax() <= 1e-12);
            assert!((fast.distance - slow.distance).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bvh_is_exact_on_arbitrary_soups(seed in any::<u64>(), n in 1usize..=500) {
        let mut rng = common::rng(seed);
        let mesh = random_soup(&mut rng, (n / 2).max(3), n);
        for _ in 0..20 {
            let q = Point3::new(rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0));
            for c in 0..mesh.component_count() {
                let fast = mesh.closest_point(c, &q).unwrap();
                let slow = mesh.closest_point_brute_force(c, &q).unwrap();
                prop_assert_eq!(fast.triangle, slow.triangle);
                prop_assert_eq!(fast.distance, slow.distance);
            }
        }
    }

    #[test]
    fn triangle_closest_point_beats_every_sample(
        coords in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let a = Point3::new(coords[0], coords[1], coords[2]);
        let b = Point3::new(coords[3], coords[4], coords[5]);
        let c = Point3::new(coords[6], coords[7], coords[8]);
        let q = Point3::new(coords[9], coords[10], coords[11]) * 2.0;
        prop_assume!(geometry::triangle_area(&a, &b, &c) > 1e-3);
        let r = closest_point_on_triangle(&q, &a, &b, &c).unwrap();
        let n = 60;
        let mut sampled = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let p = a + (b - a) * u + (c - a) * v;
                sampled = sampled.min((q - p).norm());
            }
        }
        prop_assert!(r.distance <= sampled + 1e-12);
        let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
        prop_assert!(sampled - r.distance <= longest / n as f64);
        let [w0, w1, w2] = r.barycentric;
        prop_assert!(((a * w0 + b * w1 + c * w2) - r.point).amax() < 1e-12);
    }
}

#[test]
fn sphere_vertices_lie_within_a_cell_of_the_radius() {
    let (n, half, r) = (41, 1.0, 0.6);
    let field = sphere_field(n, half);
    let cell = 2.0 * half / (n - 1) as f64;
    let mesh = extract_boundary_mesh(&field, r).unwrap();
    assert!(!mesh.is_empty());
    assert_eq!(mesh.component_count(), 1);
    for v in &mesh.vertices {
        assert!((v.norm() - r).abs() < cell, "{v}");
    }
    // outward orientation: triangle normals point away from the centre
    let outward = mesh
        .triangles
        .iter()
        .filter(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i]);
            (b - a).cross(&(c - a)).dot(&((a + b + c) / 3.0)) > 0.0
        })
        .count();
    assert!(outward == 0 || outward == mesh.triangles.len());
}

#[test]
fn distance_grows_with_the_margin_outside_the_sphere() {
    let (n, half, r) = (41, 1.0, 0.6);
    let cell = 2.0 * half / (n - 1) as f64;
    let mesh = extract_boundary_mesh(&sphere_field(n, half), r).unwrap();
    let mut rng = common::rng(52);
    for _ in 0..200 {
        let dir = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let s = rng.random_range(0.0..2.0);
        let q = dir * (r + s);
        let d = mesh.closest_point(0, &q).unwrap().distance;
        assert!(d >= s - cell && d <= s + cell, "s={s} d={d}");
    }
}

#[test]
fn vertices_interpolate_to_the_iso_level() {
    let field = GridField::from_fn(cube_grid(17, 1.0), |p| {
        (3.0 * p[0]).sin() + p[1] * p[1] - 0.5 * p[2] + 0.3 * p[0] * p[2]
    })
    .unwrap();
    for iso in [-0.4, 0.0, 0.25, 0.9] {
        let mesh = extract_boundary_mesh(&field, iso).unwrap();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!(
                (trilinear(&field, v) - iso).abs() < 1e-9,
                "{v} at iso {iso}"
            );
        }
    }
}

/// Components by breadth-first search over triangles sharing a vertex,
/// numbered by their lowest triangle.
fn bfs_components(mesh: &TriangleMesh) -> Vec<usize> {
    let mut by_vertex = vec![Vec::new(); mesh.vertices.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            by_vertex[v].push(t);
        }
    }
    let mut label = vec![usize::MAX; mesh.triangles.len()];
    let mut next = 0;
    for seed in 0..mesh.triangles.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = next;
        let mut queue = VecDeque::from([seed]);
        while let Some(t) = queue.pop_front() {
            for &v in &mesh.triangles[t] {
                for &u in &by_vertex[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        queue.push_back(u);
                    }
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn components_match_breadth_first_search() {
    let mut rng = common::rng(53);
    for _ in 0..50 {
        let count = rng.random_range(5..80);
        let mesh = random_soup(&mut rng, 120, count);
        assert_eq!(mesh.component_ids, bfs_components(&mesh));
    }
    // several blobs from a field
    let field = GridField::from_fn(cube_grid(31, 1.0), |p| {
        let blob = |cx: f64, cy: f64, cz: f64| {
            ((p[0] - cx).powi(2) + (p[1] - cy).powi(2) + (p[2] - cz).powi(2)).sqrt()
        };
        blob(-0.5, -0.5, 0.0)
            .min(blob(0.5, 0.5, 0.0))
            .min(blob(0.5, -0.5, 0.5))
    })
    .unwrap();
    let mesh = extract_boundary_mesh(&field, 0.3).unwrap();
    assert_eq!(mesh.component_count(), 3);
    assert_eq!(mesh.component_ids, bfs_components(&mesh));
}

#[test]
fn face_barrier_gradient_matches_finite_differences() {
    let mesh = extract_boundary_mesh(&sphere_field(25, 1.0), 0.5).unwrap();
    let delta = 0.05;
    let h_at = |q: &Point3| {
        let r = mesh.closest_point(0, q).unwrap();
        distance_barrier_value_and_gradient(q, &r, delta).0
    };
    let mut rng = common::rng(54);
    let mut checked = 0;
    while checked < 100 {
        let q = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = mesh.closest_point(0, &q).unwrap();
        let interior = r.feature == Feature::Face && r.barycentric.iter().all(|w| *w > 1e-3);
        if !interior || r.distance < 1e-3 {
            continue;
        }
        let (_, grad) = distance_barrier_value_and_gradient(&q, &r, delta);
        let step = 1e-7;
        for k in 0..3 {
            let mut e = Point3::zeros();
            e[k] = step;
            let fd = (h_at(&(q + e)) - h_at(&(q - e))) / (2.0 * step);
            assert!((fd - grad[k]).abs() < 1e-5, "{q}: {fd} vs {}", grad[k]);
        }
        checked += 1;
    }
}

#[test]
fn unit_cube_round_trip() {
    let mut rng = common::rng(55);
    let points: Vec<Point3> = (0..100)
        .map(|_| {
            Point3::new(
                rng.random_range(-3.0..5.0),
                rng.random_range(0.0..0.01),
                rng.random(),
            )
        })
        .collect();
    let cloud = scale_to_unit_cube(&points).unwrap();
    for (p, u) in points.iter().zip(&cloud.points) {
        assert!(u.iter().all(|c| (-1e-15..=1.0 + 1e-15).contains(c)));
        assert!((cloud.scale.from_unit(u) - p).amax() < 1e-12);
    }
}
