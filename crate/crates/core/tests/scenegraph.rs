use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sofarkit::scenegraph::{
    build_graph, from_json, relation_holds, to_json, ObjectNode, Orientation, Relation, SceneGraph,
    SceneObject,
};
use sofarkit::{PointCloud, UnitVec3, Vec3};

/// Straight re-coding of the relation definitions with default margins.
fn brute(rel: Relation, s: [f64; 3], refs: &[([f64; 3], [f64; 3])]) -> bool {
    let (delta, delta_b) = (0.02, 0.10);
    let d = |r: [f64; 3]| [s[0] - r[0], s[1] - r[1], s[2] - r[2]];
    match rel {
        Relation::Left => {
            let d = d(refs[0].0);
            d[0] < -delta && d[0].abs() >= d[1].abs()
        }
        Relation::Right => {
            let d = d(refs[0].0);
            d[0] > delta && d[0].abs() >= d[1].abs()
        }
        Relation::Front => {
            let d = d(refs[0].0);
            d[1] < -delta && d[1].abs() >= d[0].abs()
        }
        Relation::Behind => {
            let d = d(refs[0].0);
            d[1] > delta && d[1].abs() >= d[0].abs()
        }
        Relation::Top => {
            let d = d(refs[0].0);
            let half = f64::max(refs[0].1[0], refs[0].1[1]) / 2.0;
            d[2] > delta && (d[0] * d[0] + d[1] * d[1]).sqrt() <= half
        }
        Relation::Between => {
            let (a, b) = (refs[0].0, refs[1].0);
            let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let as_ = [s[0] - a[0], s[1] - a[1], s[2] - a[2]];
            let len2: f64 = ab.iter().map(|v| v * v).sum();
            let t = (0..3).map(|k| as_[k] * ab[k]).sum::<f64>() / len2;
            let dist2: f64 = (0..3).map(|k| (as_[k] - t * ab[k]).powi(2)).sum();
            dist2.sqrt() <= delta_b && (0.2..=0.8).contains(&t)
        }
        Relation::Center => {
            let n = refs.len() as f64;
            let m: Vec<f64> = (0..3).map(|k| refs.iter().map(|r| r.0[k]).sum::<f64>() / n).collect();
            let dist2: f64 = (0..3).map(|k| (s[k] - m[k]).powi(2)).sum();
            dist2.sqrt() <= delta_b
        }
    }
}

fn node(id: usize, c: Vec3, size: Vec3) -> ObjectNode {
    ObjectNode {
        id,
        phrase: format!("obj{id}"),
        centroid: c,
        bbox_size: size,
        orientations: vec![Orientation {
            text: "top".into(),
            dir: UnitVec3::new(0.0, 0.0, 1.0).unwrap(),
        }],
    }
}

#[test]
fn predicates_match_brute_force_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = [0usize; 7];
    for _ in 0..1000 {
        let m = rng.random_range(3..=6);
        let nodes: Vec<_> = (1..=m)
            .map(|id| {
                let c = Vec3::new(rng.random(), rng.random(), rng.random_range(0.0..0.3));
                let s = Vec3::new(
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                );
                node(id, c, s)
            })
            .collect();
        let g = SceneGraph::from_nodes(nodes);
        let raw = |id: usize| {
            let n = &g.nodes[id - 1];
            ([n.centroid.x, n.centroid.y, n.centroid.z], [n.bbox_size.x, n.bbox_size.y, n.bbox_size.z])
        };
        for s in 1..=m {
            let others: Vec<usize> = (1..=m).filter(|&i| i != s).collect();
            for (k, rel) in Relation::ALL.iter().enumerate() {
                let refs: Vec<usize> = match rel {
                    Relation::Between => others[..2].to_vec(),
                    Relation::Center => others.clone(),
                    _ => others[..1].to_vec(),
                };
                let want = brute(*rel, raw(s).0, &refs.iter().map(|&r| raw(r)).collect::<Vec<_>>());
                assert_eq!(relation_holds(&g, *rel, s, &refs).unwrap(), want, "{rel:?} {s} {refs:?}");
                hits[k] += usize::from(want);
            }
        }
    }
    // Every relation is exercised in both outcomes.
    assert!(hits.iter().all(|&h| h > 0), "{hits:?}");
}

#[test]
fn cube_cloud_centroid_and_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = [0.5, 0.5, 0.05];
    let pts: Vec<Vec3> = (0..4000)
        .map(|_| {
            Vec3::new(
                c[0] + rng.random_range(-0.05..0.05),
                c[1] + rng.random_range(-0.05..0.05),
                c[2] + rng.random_range(-0.05..0.05),
            )
        })
        .collect();
    let mut mean = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts {
        for k in 0..3 {
            mean[k] += p[k] / pts.len() as f64;
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let g = build_graph(&[SceneObject {
        phrase: "cube".into(),
        cloud: PointCloud::new(pts).unwrap(),
        orientations: vec![],
    }])
    .unwrap();
    let n = &g.nodes[0];
    assert!(g.edges.is_empty());
    for k in 0..3 {
        assert!((n.centroid[k] - mean[k]).abs() < 1e-12);
        assert!((n.bbox_size[k] - (hi[k] - lo[k])).abs() < 1e-12);
        assert!((n.centroid[k] - c[k]).abs() < 3e-3);
        assert!((n.bbox_size[k] - 0.1).abs() < 1e-3);
    }
}

fn arb_graph() -> impl Strategy<Value = SceneGraph> {
    prop::collection::vec(
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(0.01f64..0.5), prop::array::uniform3(-1.0f64..1.0)),
        1..7,
    )
    .prop_filter_map("direction must be nonzero", |v| {
        let nodes = v
            .into_iter()
            .enumerate()
            .map(|(i, (c, s, d))| {
                let mut n = node(i + 1, Vec3::from(c), Vec3::from(s));
                n.orientations[0].dir = UnitVec3::normalize(Vec3::from(d)).ok()?;
                Some(n)
            })
            .collect::<Option<Vec<_>>>()?;
        Some(SceneGraph::from_nodes(nodes))
    })
}

proptest! {
    #[test]
    fn edges_are_antisymmetric_and_reciprocal(g in arb_graph()) {
        let m = g.nodes.len();
        prop_assert_eq!(g.edges.len(), m * (m - 1));
        for e in &g.edges {
            prop_assert_ne!(e.a, e.b);
            let back = g.edge(e.b, e.a).unwrap();
            prop_assert_eq!(e.rel_translation, -back.rel_translation);
            prop_assert!((e.size_ratio * back.size_ratio - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trips(g in arb_graph()) {
        let text = to_json(&g);
        let back = from_json(&text).unwrap();
        prop_assert_eq!(to_json(&back), text);
        prop_assert_eq!(back.nodes.len(), g.nodes.len());
        for (a, b) in back.nodes.iter().zip(&g.nodes) {
            prop_assert_eq!(a.centroid, b.centroid);
            prop_assert_eq!(a.bbox_size, b.bbox_size);
            prop_assert_eq!(&a.phrase, &b.phrase);
            prop_assert_eq!(&a.orientations, &b.orientations);
        }
        prop_assert_eq!(back.edges.len(), g.edges.len());
    }

    #[test]
    fn lateral_relations_are_consistent(a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0)) {
        let g = SceneGraph::from_nodes(vec![
            node(1, Vec3::from(a), Vec3::repeat(0.1)),
            node(2, Vec3::from(b), Vec3::repeat(0.1)),
        ]);
        let h = |rel, s, r| relation_holds(&g, rel, s, &[r]).unwrap();
        prop_assert_eq!(h(Relation::Left, 1, 2), h(Relation::Right, 2, 1));
        prop_assert_eq!(h(Relation::Front, 1, 2), h(Relation::Behind, 2, 1));
        let lateral = [Relation::Left, Relation::Right, Relation::Front, Relation::Behind];
        prop_assert!(lateral.iter().filter(|r| h(**r, 1, 2)).count() <= 1);
    }
}
