mod common;

use causalbench::inference::query_probability;
use causalbench::scm::WorldSampler;
use causalbench::{Event, NodeId};

/// Forward-sampled frequencies agree with exact marginals.
#[test]
fn forward_sampling_matches_enumeration() {
    const DRAWS: usize = 20_000;
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let scm = common::random_scm(1000 + k, 3 + (k as usize % 5), k as usize);
        let n = scm.node_count();
        let mut ones = vec![0usize; n];
        let mut world = vec![0; n];
        let mut sampler = WorldSampler::new(&scm, k);
        for _ in 0..DRAWS {
            sampler.sample_into(&mut world);
            for (c, &v) in ones.iter_mut().zip(&world) {
                *c += v;
            }
        }
        for (v, &count) in ones.iter().enumerate() {
            let p = query_probability(&scm, &Event::from_pairs([(NodeId(v), 1)]), &Event::empty())
                .unwrap();
            let sd = (p * (1.0 - p) / DRAWS as f64).sqrt();
            let freq = count as f64 / DRAWS as f64;
            let z = match (sd > 0.0, freq == p) {
                (true, _) => (freq - p).abs() / sd,
                (false, true) => 0.0,
                (false, false) => f64::INFINITY,
            };
            worst = worst.max(z);
        }
    }
    assert!(
        worst <= 4.0,
        "largest deviation {worst:.2} standard deviations"
    );
}
