use layoutdiff::geometry::{oob_metrics, FloorPlan, Vec2};
use layoutdiff::scene::{generate_toy_dataset, Placement, RulesConfig, SceneObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn front(o: &SceneObject) -> Vec2 {
    Vec2::new(-o.theta.sin(), o.theta.cos())
}

fn back_corners(o: &SceneObject) -> [Vec2; 2] {
    let c = Vec2::new(o.position[0], o.position[2]);
    let f = front(o);
    let side = Vec2::new(f.y, -f.x);
    let back = c - f * (0.5 * o.dimension[2]);
    [
        back + side * (0.5 * o.dimension[0]),
        back - side * (0.5 * o.dimension[0]),
    ]
}

fn flush_to_some_wall(o: &SceneObject, floor: &FloorPlan) -> bool {
    let [p, q] = back_corners(o);
    floor.edges().any(|(a, b)| {
        point_segment_distance(p, a, b) < 0.01 && point_segment_distance(q, a, b) < 0.01
    })
}

fn inside_box(p: Vec2, o: &SceneObject) -> bool {
    let d = p - Vec2::new(o.position[0], o.position[2]);
    let (c, s) = (o.theta.cos(), o.theta.sin());
    // inverse rotation into the local frame
    let local = Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y);
    local.x.abs() <= 0.5 * o.dimension[0] && local.y.abs() <= 0.5 * o.dimension[2]
}

/// Monte Carlo estimate of the fraction of `a`'s footprint covered by `b`.
fn covered_fraction<R: Rng>(a: &SceneObject, b: &SceneObject, rng: &mut R, n: usize) -> f64 {
    let (c, s) = (a.theta.cos(), a.theta.sin());
    let hits = (0..n)
        .filter(|_| {
            let l = Vec2::new(
                rng.random_range(-0.5..0.5) * a.dimension[0],
                rng.random_range(-0.5..0.5) * a.dimension[2],
            );
            let p = Vec2::new(a.position[0], a.position[2])
                + Vec2::new(c * l.x - s * l.y, s * l.x + c * l.y);
            inside_box(p, b)
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn scenes_satisfy_rules_under_independent_checker() {
    let rules = RulesConfig::default();
    let scenes = generate_toy_dataset(&rules, 150, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for scene in &scenes {
        assert!(oob_metrics(std::slice::from_ref(scene), 0.2).unwrap().oba < 1e-9);
        for o in &scene.objects {
            let rule = &rules.categories[o.category];
            if matches!(rule.placement, Placement::Wall) {
                assert!(
                    flush_to_some_wall(o, &scene.floor),
                    "{} not flush",
                    rule.name
                );
            }
            if let Placement::Around { anchor } = &rule.placement {
                let host = rules
                    .categories
                    .iter()
                    .position(|c| &c.name == anchor)
                    .unwrap();
                let faces_host = scene
                    .objects
                    .iter()
                    .filter(|h| h.category == host)
                    .any(|h| {
                        let to_host =
                            Vec2::new(h.position[0] - o.position[0], h.position[2] - o.position[2]);
                        to_host.dot(front(o)) / to_host.norm() > 0.99 && to_host.norm() < 2.0
                    });
                assert!(faces_host, "chair does not face a table");
            }
        }
        for (i, a) in scene.objects.iter().enumerate() {
            for b in &scene.objects[i + 1..] {
                let (small, big) =
                    if a.dimension[0] * a.dimension[2] <= b.dimension[0] * b.dimension[2] {
                        (a, b)
                    } else {
                        (b, a)
                    };
                let n = 4000;
                let f = covered_fraction(small, big, &mut rng, n);
                assert!(
                    f <= 0.05 + 3.0 * (0.05 * 0.95 / n as f64).sqrt(),
                    "overlap {f}"
                );
            }
        }
    }
}

/// Exact presence probability of each category under the count priors,
/// conditioned on the total object count lying within the configured bounds.
fn presence_oracle(rules: &RulesConfig) -> Vec<f64> {
    let k = rules.categories.len();
    // (counts, probability) over all joint outcomes
    let mut states: Vec<(Vec<usize>, f64)> = vec![(vec![], 1.0)];
    for c in &rules.categories {
        let mut next = Vec::new();
        for (counts, p) in &states {
            let allowed = match &c.requires {
                Some(r) => counts[rules.categories.iter().position(|o| &o.name == r).unwrap()] > 0,
                None => true,
            };
            if !allowed {
                next.push(([counts.clone(), vec![0]].concat(), *p));
                continue;
            }
            next.push(([counts.clone(), vec![0]].concat(), p * (1.0 - c.presence)));
            let span = (c.count[1] - c.count[0] + 1) as f64;
            for n in c.count[0]..=c.count[1] {
                next.push(([counts.clone(), vec![n]].concat(), p * c.presence / span));
            }
        }
        states = next;
    }
    let valid: Vec<&(Vec<usize>, f64)> = states
        .iter()
        .filter(|(c, _)| (rules.min_objects..=rules.max_objects).contains(&c.iter().sum()))
        .collect();
    let z: f64 = valid.iter().map(|(_, p)| p).sum();
    (0..k)
        .map(|i| {
            valid
                .iter()
                .filter(|(c, _)| c[i] > 0)
                .map(|(_, p)| p)
                .sum::<f64>()
                / z
        })
        .collect()
}

#[test]
fn category_frequencies_match_priors() {
    let rules = RulesConfig::default();
    let n = 1000;
    let scenes = generate_toy_dataset(&rules, n, 17).unwrap();
    let expected = presence_oracle(&rules);
    for (i, p) in expected.iter().enumerate() {
        let seen = scenes
            .iter()
            .filter(|s| s.objects.iter().any(|o| o.category == i))
            .count() as f64;
        let bound = 3.0 * (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (seen - n as f64 * p).abs() <= bound,
            "{}: {seen} vs {:.1} ± {bound:.1}",
            rules.categories[i].name,
            n as f64 * p
        );
    }
}
