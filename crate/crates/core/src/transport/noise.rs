use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::image::PenumbraImage;

fn mean_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64
}

/// Adds white Gaussian noise at the requested signal-to-noise ratio and clamps
/// at zero. `f64::INFINITY` leaves the image untouched.
pub fn add_noise(y: &PenumbraImage, snr_db: f64, seed: u64) -> Result<PenumbraImage> {
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "snr must be finite or +inf, got {snr_db}"
        )));
    }
    if !y.is_valid() {
        return Err(Error::InvalidInput(
            "image must be finite and nonnegative".into(),
        ));
    }
    let sigma = (mean_square(&y.values) / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut out = y.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        *v = (*v + normal.sample(&mut rng)).max(0.0);
    }
    Ok(out)
}

/// Constant background level giving `10 log10(mean(s^2) / level^2) = sbr_db`.
pub fn background_level(signal: &[f64], sbr_db: f64) -> Result<f64> {
    if !sbr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sbr must be finite, got {sbr_db}"
        )));
    }
    Ok((mean_square(signal) / 10f64.powf(sbr_db / 10.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_snr_is_identity() {
        let img = PenumbraImage::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(add_noise(&img, f64::INFINITY, 1).unwrap(), img);
        assert!(add_noise(&img, f64::NAN, 1).is_err());
        assert!(add_noise(&img, f64::NEG_INFINITY, 1).is_err());
    }

    #[test]
    fn empirical_snr_matches_request() {
        let n = 1_000_000;
        let img = PenumbraImage::new(1000, 1000, 1, vec![10.0; n]).unwrap();
        let noisy = add_noise(&img, 10.0, 3).unwrap();
        let noise_power: f64 = noisy
            .values
            .iter()
            .zip(&img.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n as f64;
        let snr = 10.0 * (100.0 / noise_power).log10();
        assert!((snr - 10.0).abs() < 0.1, "snr {snr}");
    }

    #[test]
    fn seeded_noise_is_bit_identical() {
        let img = PenumbraImage::new(4, 4, 3, (0..48).map(|i| i as f64).collect()).unwrap();
        assert_eq!(
            add_noise(&img, 5.0, 9).unwrap(),
            add_noise(&img, 5.0, 9).unwrap()
        );
        assert!(add_noise(&img, 5.0, 9).unwrap().is_valid());
    }

    #[test]
    fn background_level_hits_sbr() {
        let s = vec![2.0; 10];
        let level = background_level(&s, 10.0).unwrap();
        assert!((10.0 * (4.0 / (level * level)).log10() - 10.0).abs() < 1e-12);
    }
}
