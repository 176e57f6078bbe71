//! A ten-arm, four-therapy study modeled on a tinnitus treatment RCT:
//! CBT, hearing aids (HA), structured counseling (SC) and sound therapy
//! (ST), alone and in all six pairs. HA arms require the `hearing_loss`
//! flag. The patient representation has 32 baseline features in
//! questionnaire blocks.

use std::collections::BTreeMap;

use crate::model::{Arm, Feature, FeatureKind, FeatureSpace, StudyConfig, Therapy};
use crate::synth::{EffectModel, GeneratorConfig, Interaction, NumericScale};

pub const HEARING_LOSS: &str = "hearing_loss";
pub const THERAPIES: [&str; 4] = ["CBT", "HA", "SC", "ST"];

fn features() -> Vec<Feature> {
    use FeatureKind::*;
    let mut f = vec![
        Feature::new("gender", Binary, "single"),
        Feature::new("age", Numeric, "single"),
        Feature::new("tinnitus_loudness", Numeric, "single"),
        Feature::new("tinnitus_frequency", Numeric, "single"),
        Feature::new("tinnitus_duration", Numeric, "single"),
        Feature::new("tinnitus_laterality", Categorical, "single"),
        Feature::new("audiogram_left", Numeric, "audiogram"),
        Feature::new("audiogram_right", Numeric, "audiogram"),
        Feature::new("ftq", Numeric, "FTQ"),
        Feature::new("mini_tq", Numeric, "MiniTQ"),
        Feature::new("guf", Numeric, "GUF"),
        Feature::new("phq9", Ordinal, "PHQ9"),
        Feature::new("tsq", Numeric, "TSQ"),
        Feature::new("tfi_total", Numeric, "TFI"),
    ];
    for s in [
        "intrusive",
        "sense_of_control",
        "cognitive",
        "sleep",
        "auditory",
        "relaxation",
        "quality_of_life",
        "emotional",
    ] {
        f.push(Feature::new(format!("tfi_{s}"), Numeric, "TFI"));
    }
    for s in ["overall", "physical", "psychological", "social", "environment"] {
        f.push(Feature::new(format!("whoqol_{s}"), Numeric, "WHOQoL"));
    }
    for s in [
        "extraversion",
        "agreeableness",
        "conscientiousness",
        "negative_emotionality",
        "open_mindedness",
    ] {
        f.push(Feature::new(format!("bfi_{s}"), Numeric, "BFI2"));
    }
    f
}

pub fn uniti_study() -> StudyConfig {
    let therapies = THERAPIES.iter().map(|t| Therapy::new(*t)).collect();
    let mut arms: Vec<Arm> = THERAPIES.iter().map(|t| Arm::new(*t, &[t])).collect();
    for (i, a) in THERAPIES.iter().enumerate() {
        for b in &THERAPIES[i + 1..] {
            arms.push(Arm::new(format!("{a}+{b}"), &[a, b]));
        }
    }
    let arms = arms
        .into_iter()
        .map(|a| if a.contains("HA") { a.requiring(HEARING_LOSS) } else { a })
        .collect();
    let space = FeatureSpace {
        features: features(),
        eligibility_flags: vec![HEARING_LOSS.into()],
    };
    StudyConfig::new(therapies, arms, space).expect("preset study is valid")
}

fn scales() -> BTreeMap<String, NumericScale> {
    let s = |m, sd| NumericScale { mean: m, sd };
    let mut out: BTreeMap<String, NumericScale> = [
        ("age", s(52.0, 12.0)),
        ("tinnitus_loudness", s(6.0, 2.0)),
        ("tinnitus_frequency", s(6000.0, 2500.0)),
        ("tinnitus_duration", s(8.0, 6.0)),
        ("audiogram_left", s(25.0, 15.0)),
        ("audiogram_right", s(25.0, 15.0)),
        ("ftq", s(8.0, 4.0)),
        ("mini_tq", s(11.0, 5.0)),
        ("guf", s(15.0, 8.0)),
        ("tsq", s(30.0, 10.0)),
        ("tfi_total", s(50.0, 20.0)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for f in features() {
        if f.kind == FeatureKind::Numeric && !out.contains_key(&f.name) {
            out.insert(f.name, s(50.0, 15.0));
        }
    }
    out
}

/// Generator for the preset study. `heterogeneity` is the ratio of the
/// interaction coefficients to the noise standard deviation (5 units).
pub fn uniti_generator(seed: u64, n_patients: usize, heterogeneity: f64) -> GeneratorConfig {
    let noise_sd = 5.0;
    let c = heterogeneity * noise_sd;
    let inter = |feature: &str, therapy: &str, sign: f64| Interaction {
        feature: feature.into(),
        therapy: therapy.into(),
        coef: sign * c,
    };
    GeneratorConfig {
        seed,
        n_patients,
        study: uniti_study(),
        effect_model: EffectModel {
            base: [("CBT", 12.0), ("HA", 10.0), ("SC", 9.0), ("ST", 8.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            interactions: vec![
                inter("ftq", "CBT", 1.0),
                inter("phq9", "CBT", -0.5),
                inter("audiogram_left", "HA", 1.0),
                inter("tfi_sleep", "SC", 1.0),
                inter("age", "SC", -0.5),
                inter("tinnitus_loudness", "ST", 1.0),
            ],
        },
        noise_sd,
        feature_missing_rate: 0.05,
        block_missing_rate: 0.05,
        dropout_rate: 0.18,
        eligibility_rate: 0.5,
        feature_scales: scales(),
        baseline_mean: 50.0,
        baseline_sd: 15.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shape() {
        let s = uniti_study();
        assert_eq!(s.therapies().len(), 4);
        assert_eq!(s.arms().len(), 10);
        assert_eq!(s.arms().iter().filter(|a| a.is_combination()).count(), 6);
        assert_eq!(s.arms().iter().filter(|a| a.requires_eligibility.is_some()).count(), 4);
        assert_eq!(s.feature_space().len(), 32);
        uniti_generator(1, 10, 2.0).validate().unwrap();
    }
}
