//! Progress-aware scheduling of the conditioning-image corruption.
//!
//! Both the noise intensity and the number of perturbed targets follow an
//! inverse decay in the epoch index `p` (counted from 0):
//!
//! ```text
//! sigma_p = sigma_max / (1 + beta * p)
//! |C_p|   = floor(m / (1 + gamma * p))
//! ```
//!
//! The same state applies to every batch of an epoch.

use crate::config::SpadConfig;
use crate::error::{Result, SpadError};
use crate::types::ScheduleState;

pub fn noise_sigma(epoch: usize, sigma_max: f64, beta: f64) -> Result<f64> {
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(SpadError::InvalidParam(format!(
            "sigma_max must be positive, got {sigma_max}"
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(SpadError::InvalidParam(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    Ok(sigma_max / (1.0 + beta * epoch as f64))
}

pub fn perturb_count(epoch: usize, m: usize, gamma: f64) -> Result<usize> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(SpadError::InvalidParam(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    let v = (m as f64 / (1.0 + gamma * epoch as f64)).floor();
    // The quotient never exceeds m, so the cast cannot overflow.
    Ok((v as usize).min(m))
}

/// Corruption state for epoch `p`. With the scheduler disabled the epoch-0
/// values are used throughout.
pub fn schedule_for_epoch(epoch: usize, config: &SpadConfig) -> Result<ScheduleState> {
    let p = if config.enable_pas { epoch } else { 0 };
    Ok(ScheduleState {
        epoch,
        sigma: noise_sigma(p, config.sigma_max, config.beta)?,
        target_count: perturb_count(p, config.m, config.gamma)?,
    })
}

/// `epoch,sigma,target_count` rows for epochs `0..epochs`.
pub fn schedule_csv(epochs: usize, config: &SpadConfig) -> Result<String> {
    let mut out = String::from("epoch,sigma,target_count\n");
    for p in 0..epochs {
        let s = schedule_for_epoch(p, config)?;
        out.push_str(&format!("{},{},{}\n", s.epoch, s.sigma, s.target_count));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_examples() {
        assert_eq!(noise_sigma(0, 0.5, 0.2).unwrap(), 0.5);
        assert!((noise_sigma(5, 0.5, 0.2).unwrap() - 0.25).abs() < 1e-12);
        for p in [0, 1, 17, 10_000] {
            assert_eq!(noise_sigma(p, 0.5, 0.0).unwrap(), 0.5);
        }
        assert!(noise_sigma(1_000_000, 0.5, 0.2).unwrap() < 1e-4);
    }

    #[test]
    fn count_examples() {
        assert_eq!(perturb_count(0, 3, 0.1).unwrap(), 3);
        assert_eq!(perturb_count(10, 3, 0.1).unwrap(), 1);
        assert_eq!(perturb_count(40, 3, 0.1).unwrap(), 0);
        assert_eq!(perturb_count(7, 0, 0.1).unwrap(), 0);
    }

    #[test]
    fn invalid_params() {
        assert!(noise_sigma(0, 0.0, 0.2).is_err());
        assert!(noise_sigma(0, 0.5, -0.1).is_err());
        assert!(noise_sigma(0, f64::NAN, 0.1).is_err());
        assert!(perturb_count(0, 3, -1.0).is_err());
    }

    #[test]
    fn epoch_bundle_and_disabled_scheduler() {
        let mut cfg = SpadConfig::default();
        let s0 = schedule_for_epoch(0, &cfg).unwrap();
        assert_eq!((s0.sigma, s0.target_count), (0.5, 3));
        let s5 = schedule_for_epoch(5, &cfg).unwrap();
        assert!((s5.sigma - 0.25).abs() < 1e-12);
        assert_eq!(s5.target_count, 2);
        cfg.enable_pas = false;
        let s50 = schedule_for_epoch(50, &cfg).unwrap();
        assert_eq!((s50.epoch, s50.sigma, s50.target_count), (50, 0.5, 3));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = schedule_csv(3, &SpadConfig::default()).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,sigma,target_count");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.5,3"));
    }

    proptest! {
        #[test]
        fn monotone_non_increasing(p in 0usize..100_000, smax in 0.01f64..10.0, beta in 0.0f64..5.0,
                                   m in 0usize..50, gamma in 0.0f64..5.0) {
            prop_assert!(noise_sigma(p + 1, smax, beta).unwrap() <= noise_sigma(p, smax, beta).unwrap());
            let c0 = perturb_count(p, m, gamma).unwrap();
            prop_assert!(perturb_count(p + 1, m, gamma).unwrap() <= c0);
            prop_assert!(c0 <= m);
        }

        #[test]
        fn pure_function(p in 0usize..1000) {
            let cfg = SpadConfig::default();
            prop_assert_eq!(schedule_for_epoch(p, &cfg).unwrap(), schedule_for_epoch(p, &cfg).unwrap());
        }
    }
}
