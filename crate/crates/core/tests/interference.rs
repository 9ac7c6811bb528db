use spatial_causal::interference::{
    policy_average, AverageMethod, Effect, Exposure, Policy, QuadraticSpillover, TreatmentField,
};
use spatial_causal::lattice::build_rook_grid;

fn model() -> QuadraticSpillover {
    let lattice = build_rook_grid(3, 3).unwrap();
    let baseline = (0..9).map(|i| 0.3 * i as f64 - 1.0).collect();
    QuadraticSpillover::new(
        [0.7, 1.5, -0.6, 0.9],
        baseline,
        Exposure::neighbor_mean(&lattice),
    )
    .unwrap()
}

#[test]
fn monte_carlo_agrees_with_enumeration_across_seeds() {
    let m = model();
    let current = TreatmentField::from_bits(0b101_010_101, 9);
    let policies = [
        Policy::iid(0.35).unwrap(),
        Policy::transition(0.2, 0.8, current).unwrap(),
    ];
    let baseline = Policy::iid(0.1).unwrap();
    for policy in &policies {
        for effect in Effect::ALL {
            let exact = policy_average(&m, policy, &baseline, effect, AverageMethod::Enumerate)
                .unwrap()
                .value;
            let within = (0..100u64)
                .filter(|&seed| {
                    let mc = policy_average(
                        &m,
                        policy,
                        &baseline,
                        effect,
                        AverageMethod::MonteCarlo { draws: 2000, seed },
                    )
                    .unwrap();
                    assert!(mc.mc_se > 0.0);
                    (mc.value - exact).abs() <= 3.0 * mc.mc_se
                })
                .count();
            // 3 SE bands hold 99.7% of the time; allow sampling slack
            assert!(within >= 95, "{effect:?} {}: {within}/100", policy.label());
        }
    }
}

#[test]
fn monte_carlo_is_reproducible_per_seed() {
    let m = model();
    let p = Policy::iid(0.5).unwrap();
    let b = Policy::iid(0.0).unwrap();
    let run = |seed| {
        policy_average(
            &m,
            &p,
            &b,
            Effect::Total,
            AverageMethod::MonteCarlo { draws: 500, seed },
        )
        .unwrap()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).value, run(5).value);
}
