#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use spad::config::{BoundaryMethod, SpadConfig, TargetGranularity};
use spad::data::{generate_corpus_samples, read_corpus, write_corpus, Corpus, PhantomConfig};
use spad::grid::{Image, LabelMap, Mask};
use spad::perturb::{
    anchor_count, apply_perturbation, build_bcd_mask, build_scd_mask, enumerate_targets,
    merge_masks, perturb_condition, select_targets,
};
use spad::seed::seeded;
use spad::types::{PerturbMask, ScheduleState, SegSample};

/// Random rectangles and discs painted over a background.
pub fn random_label<R: Rng>(rng: &mut R, h: usize, w: usize, k: usize) -> LabelMap {
    let mut label = LabelMap::new(h, w);
    for _ in 0..rng.random_range(0..6) {
        let class = rng.random_range(1..k) as u8;
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, cw) = (rng.random_range(1..=h / 2), rng.random_range(1..=w / 2));
        let disc = rng.random_bool(0.5);
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                let (dy, dx) = (r as f64 - (r0 as f64 + rh as f64 / 2.0), c as f64 - (c0 as f64 + cw as f64 / 2.0));
                if !disc || (dy / (rh as f64 / 2.0)).powi(2) + (dx / (cw as f64 / 2.0)).powi(2) <= 1.0 {
                    label.set(r, c, class);
                }
            }
        }
    }
    label
}

/// Pixels with a 4-neighbour of a different label, found by brute force.
fn transition_pixels(label: &LabelMap) -> Vec<(usize, usize)> {
    let (h, w) = label.shape();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = label.get(r, c);
            let diff = (r > 0 && label.get(r - 1, c) != l)
                || (r + 1 < h && label.get(r + 1, c) != l)
                || (c > 0 && label.get(r, c - 1) != l)
                || (c + 1 < w && label.get(r, c + 1) != l);
            if diff {
                out.push((r, c));
            }
        }
    }
    out
}

fn random_mask<R: Rng>(rng: &mut R, h: usize, w: usize) -> Mask {
    let p = rng.random_range(0.0..1.0);
    Mask::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// Runs every perturbation invariant on one randomized case.
pub fn check_perturb_case(case_seed: u64) -> Result<(), String> {
    let mut rng = seeded(case_seed);
    let h = rng.random_range(6..40);
    let w = rng.random_range(6..40);
    let k = rng.random_range(2..6);
    let label = random_label(&mut rng, h, w, k);
    let gran = if rng.random_bool(0.5) {
        TargetGranularity::Class
    } else {
        TargetGranularity::Component
    };
    let method = if rng.random_bool(0.7) {
        BoundaryMethod::Morphological
    } else {
        BoundaryMethod::Canny
    };
    let ratio = rng.random_range(0.05..0.95);
    let band = rng.random_range(1..4usize);
    let count = rng.random_range(0..5usize);
    let sigma = rng.random_range(0.0..1.0);
    let clamp = rng.random_bool(0.3);
    let fail = |m: String| Err(format!("case {case_seed}: {m}"));

    // Targets.
    let targets = enumerate_targets(&label, gran, k);
    let ids = targets.ids();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return fail("duplicate target ids".into());
    }
    if targets.targets.iter().any(|t| t.class == 0 || t.pixels.iter().any(|&p| label.as_slice()[p] == 0)) {
        return fail("background in target set".into());
    }
    let chosen = select_targets(&targets, count, &mut rng);
    if chosen.len() != count.min(targets.len()) || !chosen.ids().iter().all(|i| ids.contains(i)) {
        return fail("selection size or membership".into());
    }

    // Semantic mask.
    let scd = build_scd_mask(&label, &chosen, ratio, &mut rng).map_err(|e| e.to_string())?;
    let anchors = scd.anchors().expect("scd carries anchors");
    if !scd.mask().is_disjoint_from(anchors) {
        return fail("anchors overlap the mask".into());
    }
    let support = Mask::from_fn(h, w, |r, c| {
        chosen.targets.iter().any(|t| t.pixels.contains(&(r * w + c)))
    });
    if scd.mask().union(anchors).unwrap() != support {
        return fail("anchors and mask do not cover the selected support".into());
    }
    for t in &chosen.targets {
        let a = t.pixels.iter().filter(|&&p| anchors.as_slice()[p]).count();
        if a != anchor_count(t.pixels.len(), ratio) {
            return fail(format!("target {} has {a} anchors", t.id));
        }
    }

    // Boundary mask locality and monotonicity.
    let bcd = build_bcd_mask(&label, band, method).map_err(|e| e.to_string())?;
    let wider = build_bcd_mask(&label, band + 1, method).map_err(|e| e.to_string())?;
    if !bcd.mask().is_subset_of(wider.mask()) {
        return fail("band not monotone in width".into());
    }
    let reach = match method {
        BoundaryMethod::Morphological => band,
        BoundaryMethod::Canny => band + 1,
    };
    let edges = transition_pixels(&label);
    for r in 0..h {
        for c in 0..w {
            if *bcd.mask().get(r, c)
                && !edges.iter().any(|&(er, ec)| er.abs_diff(r).max(ec.abs_diff(c)) <= reach)
            {
                return fail(format!("band pixel ({r},{c}) far from any boundary"));
            }
        }
    }

    // Union laws.
    let (a, b, c) = (
        PerturbMask::merged(random_mask(&mut rng, h, w)),
        PerturbMask::merged(random_mask(&mut rng, h, w)),
        PerturbMask::merged(random_mask(&mut rng, h, w)),
    );
    let m = |x: &PerturbMask, y: &PerturbMask| merge_masks(x, y).unwrap();
    if m(&a, &b).mask() != m(&b, &a).mask()
        || m(&m(&a, &b), &c).mask() != m(&a, &m(&b, &c)).mask()
        || m(&a, &a).mask() != a.mask()
    {
        return fail("union laws".into());
    }
    let merged = m(&scd, &bcd);
    if merged.mask().count() != scd.mask().union(bcd.mask()).unwrap().count() {
        return fail("merge is not the union".into());
    }

    // Noise: exact off-mask equality.
    let image = Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0f32));
    let noisy = apply_perturbation(&image, &merged, sigma, &mut rng, clamp).map_err(|e| e.to_string())?;
    for ((x, y), &on) in image.as_slice().iter().zip(noisy.as_slice()).zip(merged.mask().as_slice()) {
        if !on && x.to_bits() != y.to_bits() {
            return fail("off-mask pixel changed".into());
        }
        if clamp && !(0.0..=1.0).contains(y) {
            return fail("clamped value out of range".into());
        }
    }

    // Determinism of the full pipeline.
    let sample = SegSample::new("case", image, label, k).map_err(|e| e.to_string())?;
    let cfg = SpadConfig {
        anchor_ratio: ratio,
        band_half_width: band,
        boundary_method: method,
        target_granularity: gran,
        clamp_condition: clamp,
        ..SpadConfig::default()
    };
    let state = ScheduleState {
        epoch: 0,
        sigma,
        target_count: count,
    };
    let one = perturb_condition(&sample, &state, &cfg, &mut seeded(case_seed ^ 0xabcd)).unwrap();
    let two = perturb_condition(&sample, &state, &cfg, &mut seeded(case_seed ^ 0xabcd)).unwrap();
    let bits = |i: &Image| i.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&one.image) != bits(&two.image) || one.merged != two.merged {
        return fail("pipeline not deterministic".into());
    }
    Ok(())
}

/// A small phantom corpus with `n_train + n_test` samples.
pub fn tiny_phantom(n_train: usize, n_test: usize, size: usize, classes: usize) -> PhantomConfig {
    let intensities = (0..classes).map(|c| 0.1 + 0.8 * c as f64 / (classes - 1) as f64).collect();
    PhantomConfig {
        n_samples: n_train + n_test,
        n_test,
        size,
        num_classes: classes,
        intensity_per_class: intensities,
        blob_scale: 0.2,
        ..PhantomConfig::default()
    }
}

pub fn write_phantom_corpus(cfg: &PhantomConfig, dir: &Path) -> Corpus {
    let samples = generate_corpus_samples(cfg).unwrap();
    write_corpus(&samples, cfg.n_test, cfg.num_classes, Some(cfg), dir).unwrap();
    read_corpus(dir, true).unwrap()
}

/// Config for fast harness tests.
pub fn tiny_config(classes: usize, epochs: usize) -> SpadConfig {
    let mut cfg = SpadConfig::default();
    cfg.diffusion.num_classes = classes;
    cfg.diffusion.steps = 4;
    cfg.training.epochs = epochs;
    cfg.training.batch_size = 3;
    cfg.training.checkpoint_every = 1;
    cfg.model.base_channels = 4;
    cfg.model.depth = 2;
    cfg.model.timestep_embed_dim = 8;
    cfg
}

/// Largest relative error between analytic gradients and central finite
/// differences over `probes` random parameters, on an 8x8, K=3, T=4 instance.
/// Finite differences go through the reference loss, not the training path.
pub fn gradient_check(seed: u64, t: usize, probes: usize) -> f64 {
    gradient_check_weighted(seed, t, probes, 0.0)
}

/// As [`gradient_check`], with an auxiliary x0 cross-entropy of weight `aux`.
pub fn gradient_check_weighted(seed: u64, t: usize, probes: usize, aux: f64) -> f64 {
    use spad::diffusion::{make_alpha_bar, sample_xt};
    use spad::model::{Denoiser, PredictorSpec};

    let mut rng = seeded(seed);
    let k = 3;
    let spec = make_alpha_bar(4, k).unwrap();
    let pspec = PredictorSpec {
        base_channels: 4,
        depth: 2,
        timestep_embed_dim: 8,
        num_classes: k,
        condition_channels: 1,
    };
    let mut model = Denoiser::<f64>::initialized(pspec, &mut rng).unwrap();
    let x0 = random_label(&mut rng, 8, 8, k);
    let cond = Image::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0f32));
    let xt = sample_xt(&x0, t, &spec, &mut rng).unwrap();
    let mut grads = vec![0.0f64; model.params().len()];
    model
        .hybrid_loss_and_grad(&x0, &xt, &cond, t, &spec, aux, &mut grads)
        .unwrap();
    let reference = |m: &Denoiser<f64>| {
        let mut l = m.loss(&x0, &xt, &cond, t, &spec).unwrap();
        if t >= 2 && aux > 0.0 {
            let p = m.predict_x0(&xt, &cond, t).unwrap();
            let ce: f64 = x0
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &l)| -p.as_slice()[i * k + l as usize].ln())
                .sum();
            l += aux * ce / x0.as_slice().len() as f64;
        }
        l
    };
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.random_range(0..grads.len());
        let orig = model.params()[i];
        model.params_mut()[i] = orig + eps;
        let up = reference(&model);
        model.params_mut()[i] = orig - eps;
        let down = reference(&model);
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = grads[i].abs().max(numeric.abs());
        let err = if scale < 1e-7 { 0.0 } else { (grads[i] - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}
