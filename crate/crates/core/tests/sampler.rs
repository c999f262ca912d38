use rand::Rng;
use sips_core::denoiser::{DenoiserKind, FnDenoiser};
use sips_core::predictor::PredictorKind;
use sips_core::sampler::{forward_sde_sample, sips_sample, SamplerConfig, TimeGrid};
use sips_core::verify::{
    baseline_wasserstein, forward_sde_samples, marginal_check, marginal_check_grid,
};
use sips_core::{rng, GaussianPairComponent, GaussianPairMixture, NoiseSchedule};

fn unimodal() -> GaussianPairMixture {
    GaussianPairMixture::single(1, 1.0, 2.0, 1.0).unwrap()
}

fn bimodal() -> GaussianPairMixture {
    GaussianPairMixture::new(vec![
        GaussianPairComponent::isotropic(0.5, vec![-2.0], vec![-2.0], 0.5, 1.0, 0.5),
        GaussianPairComponent::isotropic(0.5, vec![2.0], vec![2.0], 0.5, 1.0, 0.5),
    ])
    .unwrap()
}

#[test]
fn zero_denoiser_ode_returns_predictor_output_for_every_kind() {
    let prior = GaussianPairMixture::single(3, 1.0, 2.0, 0.9).unwrap();
    let sched = NoiseSchedule::default();
    let kinds = [
        PredictorKind::Identity,
        PredictorKind::MmsePosteriorMean(prior.clone()),
        PredictorKind::perturbed(
            PredictorKind::MmsePosteriorMean(prior.clone()),
            1.3,
            vec![0.1, -0.2, 0.05],
        ),
        PredictorKind::perturbed(PredictorKind::Identity, 0.7, vec![]),
    ];
    let mut r = rng::stream(1, 0, 0);
    for _ in 0..200 {
        let (_, y) = prior.sample_pair(&mut r);
        let steps = r.random_range(1..40);
        let cfg = SamplerConfig::uniform(0.0, steps, 0).unwrap();
        for kind in &kinds {
            let out = sips_sample(
                &y,
                kind,
                &DenoiserKind::Zero,
                &sched,
                &cfg,
                &mut rng::stream(0, 0, 0),
            )
            .unwrap();
            assert_eq!(out, kind.predict(&y, None).unwrap());
        }
        let (s, y) = prior.sample_pair(&mut r);
        let clean = PredictorKind::OracleClean;
        let out = sips_sample(
            &y,
            &clean.with_context(&s),
            &DenoiserKind::Zero,
            &sched,
            &cfg,
            &mut rng::stream(0, 0, 0),
        )
        .unwrap();
        assert_eq!(out, s);
    }
}

#[test]
fn ode_is_bit_reproducible_on_custom_grids() {
    let prior = unimodal();
    let sched = NoiseSchedule::default();
    let cfg = SamplerConfig {
        kappa: 0.0,
        grid: TimeGrid::new(vec![0.0, 0.05, 0.2, 0.5, 0.6, 0.95, 1.0]).unwrap(),
        post_process: true,
        seed: 4,
    };
    let predictor = PredictorKind::MmsePosteriorMean(prior.clone());
    let denoiser = DenoiserKind::OracleEta {
        prior,
        schedule: sched,
    };
    let a = sips_sample(
        &[1.3],
        &predictor,
        &denoiser,
        &sched,
        &cfg,
        &mut rng::stream(1, 0, 0),
    )
    .unwrap();
    let b = sips_sample(
        &[1.3],
        &predictor,
        &denoiser,
        &sched,
        &cfg,
        &mut rng::stream(2, 0, 0),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_denoiser_cancels_for_random_constants() {
    let sched = NoiseSchedule::default();
    let mut r = rng::stream(2, 0, 0);
    for _ in 0..100 {
        let c0: f64 = r.random_range(-5.0..5.0);
        let steps = r.random_range(1..100);
        let y: Vec<f64> = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        let predictor = PredictorKind::perturbed(PredictorKind::Identity, 0.5, vec![1.0; 4]);
        let denoiser = FnDenoiser(move |_, x: &[f64]| vec![c0; x.len()]);
        let cfg = SamplerConfig::uniform(0.0, steps, 0).unwrap();
        let out = sips_sample(
            &y,
            &predictor,
            &denoiser,
            &sched,
            &cfg,
            &mut rng::stream(0, 0, 0),
        )
        .unwrap();
        let expected = predictor.predict(&y, None).unwrap();
        for j in 0..4 {
            assert!((out[j] - expected[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn forward_sde_reaches_clean_marginal() {
    let prior = unimodal();
    let sched = NoiseSchedule::default();
    let cfg = SamplerConfig::uniform(0.4, 2000, 0).unwrap();
    let n = 100_000;
    let finals = forward_sde_samples(&prior, &sched, 0.4, &[1.0], n, 2000, 8)
        .unwrap()
        .remove(0);
    let mean = finals.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let var = finals.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // S ~ N(0, 1): se(mean) = 1/sqrt(n), se(var) = sqrt(2/(n-1))
    assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "{mean}");
    assert!(
        (var - 1.0).abs() < 3.0 * (2.0 / (n - 1) as f64).sqrt(),
        "{var}"
    );

    // the batched path agrees with the one-trajectory entry point
    let mut r = rng::stream(8, rng::domain::SDE_TRAJECTORY, 17);
    let (_, y0) = prior.sample_pair(&mut r);
    let single = forward_sde_sample(&prior, &y0, &sched, &cfg, &mut r, 1.0).unwrap();
    assert_eq!(single, finals[17]);
}

#[test]
fn marginal_check_examples() {
    let prior = unimodal();
    let sched = NoiseSchedule::default();
    for kappa in [0.0, 1.0] {
        let r = marginal_check(&prior, &sched, kappa, 1.0, 100_000, 2000, 0.02, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.energy_distance >= 0.0);
    }
}

#[test]
fn marginals_do_not_depend_on_kappa() {
    let prior = unimodal();
    let sched = NoiseSchedule::default();
    let n = 100_000;
    let reports =
        marginal_check_grid(&prior, &sched, &[0.0, 0.4, 1.0], &[0.5], n, 2000, 0.02, 21).unwrap();
    // Monte Carlo spread of W1 at this budget, from independent replicate baselines
    let reps: Vec<f64> = (0..10)
        .map(|k| baseline_wasserstein(&prior, &sched, 0.5, n, 100 + k).unwrap())
        .collect();
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let se =
        (reps.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
    for a in &reports {
        for b in &reports {
            assert!(
                (a.wasserstein1 - b.wasserstein1).abs() <= 2.0 * se,
                "kappa {} vs {}: {} vs {} (se {se})",
                a.kappa,
                b.kappa,
                a.wasserstein1,
                b.wasserstein1
            );
        }
    }
}

#[test]
fn halving_the_step_does_not_widen_the_gap() {
    let sched = NoiseSchedule::default();
    for prior in [unimodal(), bimodal()] {
        let n = 20_000;
        let floor = baseline_wasserstein(&prior, &sched, 1.0, n, 5).unwrap();
        for kappa in [0.0, 1.0] {
            let coarse =
                marginal_check(&prior, &sched, kappa, 1.0, n, 50, f64::INFINITY, 6).unwrap();
            let fine =
                marginal_check(&prior, &sched, kappa, 1.0, n, 100, f64::INFINITY, 6).unwrap();
            assert!(
                fine.wasserstein1 <= coarse.wasserstein1 + 2.0 * floor,
                "kappa {kappa}: {} -> {}",
                coarse.wasserstein1,
                fine.wasserstein1
            );
        }
    }
}
