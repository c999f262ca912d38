//! Fixtures shared by the kernel benchmarks.

use sips_core::signal::Waveform;
use sips_core::{GaussianPairComponent, GaussianPairMixture};

/// Single Gaussian pair with `Var S = 1`, `Var Y = 2`, `Cov = 1` in `dim` dimensions.
pub fn gaussian_prior(dim: usize) -> GaussianPairMixture {
    GaussianPairMixture::single(dim, 1.0, 2.0, 1.0).expect("valid prior")
}

/// Two well-separated modes at `-2` and `+2`.
pub fn bimodal_prior() -> GaussianPairMixture {
    GaussianPairMixture::new(vec![
        GaussianPairComponent::isotropic(0.5, vec![-2.0], vec![-2.0], 0.5, 1.0, 0.5),
        GaussianPairComponent::isotropic(0.5, vec![2.0], vec![2.0], 0.5, 1.0, 0.5),
    ])
    .expect("valid prior")
}

/// `len` samples of a 440 Hz tone plus a deterministic dither at 16 kHz.
pub fn tone(len: usize) -> Waveform {
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / 16_000.0;
            0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.01 * ((n * 7919) % 101) as f64 / 101.0
        })
        .collect();
    Waveform::new(samples, 16_000).expect("finite samples")
}
