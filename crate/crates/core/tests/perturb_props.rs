mod common;

use proptest::prelude::*;
use spad::config::SpadConfig;
use spad::grid::{Image, LabelMap};
use spad::perturb::perturb_condition;
use spad::schedule::schedule_for_epoch;
use spad::seed::seeded;
use spad::types::SegSample;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn perturbation_invariants_hold(case in any::<u64>()) {
        if let Err(msg) = common::check_perturb_case(case) {
            prop_assert!(false, "{}", msg);
        }
    }
}

#[test]
fn without_pas_noise_stays_at_sigma_max() {
    let label = LabelMap::from_fn(96, 96, |r, c| ((r / 24 + c / 24) % 3) as u8);
    let image = Image::filled(96, 96, 0.5);
    let sample = SegSample::new("s", image.clone(), label, 3).unwrap();
    let cfg = SpadConfig {
        enable_pas: false,
        diffusion: spad::config::DiffusionConfig { steps: 100, num_classes: 3 },
        ..SpadConfig::default()
    };
    for epoch in [0, 10, 29] {
        let state = schedule_for_epoch(epoch, &cfg).unwrap();
        let out = perturb_condition(&sample, &state, &cfg, &mut seeded(epoch as u64)).unwrap();
        let d: Vec<f64> = out
            .image
            .as_slice()
            .iter()
            .zip(image.as_slice())
            .zip(out.merged.mask().as_slice())
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (*a - *b) as f64)
            .collect();
        assert!(d.len() >= 4096, "{} masked pixels", d.len());
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 0.5).abs() < 0.03, "std {std}");
    }
}
