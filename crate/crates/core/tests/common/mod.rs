#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use treatrank_core::model::{Arm, Feature, FeatureKind, FeatureSpace, StudyConfig, Therapy};
use treatrank_core::synth::{EffectModel, GeneratorConfig, Interaction};

/// Three therapies, six arms (singles and pairs); arms with C need flag `c_ok`.
pub fn six_arm_study() -> StudyConfig {
    let arms = vec![
        Arm::new("A", &["A"]),
        Arm::new("B", &["B"]),
        Arm::new("C", &["C"]).requiring("c_ok"),
        Arm::new("A+B", &["A", "B"]),
        Arm::new("A+C", &["A", "C"]).requiring("c_ok"),
        Arm::new("B+C", &["B", "C"]).requiring("c_ok"),
    ];
    let features = vec![
        Feature::new("age", FeatureKind::Numeric, "demo"),
        Feature::new("sex", FeatureKind::Binary, "demo"),
        Feature::new("site", FeatureKind::Categorical, "demo"),
        Feature::new("severity", FeatureKind::Ordinal, "q1"),
        Feature::new("score1", FeatureKind::Numeric, "q1"),
        Feature::new("score2", FeatureKind::Numeric, "q2"),
    ];
    StudyConfig::new(
        vec![Therapy::new("A"), Therapy::new("B"), Therapy::new("C")],
        arms,
        FeatureSpace {
            features,
            eligibility_flags: vec!["c_ok".into()],
        },
    )
    .unwrap()
}

pub fn six_arm_generator(seed: u64, n: usize) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        n_patients: n,
        study: six_arm_study(),
        effect_model: EffectModel {
            base: BTreeMap::from([("A".into(), 10.0), ("B".into(), 8.0), ("C".into(), 6.0)]),
            interactions: vec![
                Interaction {
                    feature: "score1".into(),
                    therapy: "A".into(),
                    coef: 6.0,
                },
                Interaction {
                    feature: "age".into(),
                    therapy: "C".into(),
                    coef: -4.0,
                },
            ],
        },
        noise_sd: 3.0,
        feature_missing_rate: 0.1,
        block_missing_rate: 0.05,
        dropout_rate: 0.1,
        eligibility_rate: 0.6,
        feature_scales: BTreeMap::new(),
        baseline_mean: 50.0,
        baseline_sd: 15.0,
    }
}
