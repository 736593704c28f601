//! Single-block physical layer: Rayleigh channel, transmit normalization,
//! AWGN, receive rescaling and the modulo receiver.
//!
//! Power convention: every block is scaled to `‖x‖² = N`, the receiver
//! knows the scale `√gamma`, and `E_s/N₀ = 1/σ²`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

use crate::constellation::Constellation;
use crate::numerics::{norm_sq, CMatrix, C64};
use crate::precoder::{zf_matrix, PrecodeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("transmit block is identically zero")]
    ZeroBlock,
    #[error(transparent)]
    Precode(#[from] PrecodeError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Channel `H` (`N × M`) with its zero-forcing matrix `W` (`M × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: CMatrix,
    w: CMatrix,
}

impl ChannelRealization {
    /// Wraps a given channel and computes its ZF matrix.
    pub fn new(h: CMatrix) -> Result<Self, LinkError> {
        let w = zf_matrix(&h)?;
        Ok(ChannelRealization { h, w })
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn w(&self) -> &CMatrix {
        &self.w
    }

    /// Number of users `N`.
    pub fn users(&self) -> usize {
        self.h.rows()
    }

    /// Number of transmit antennas `M`.
    pub fn antennas(&self) -> usize {
        self.h.cols()
    }
}

/// One `CN(0, variance)` sample; the real part is drawn first.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// I.i.d. `CN(0, 1)` channel, drawn in row-major order.
pub fn draw_channel<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<ChannelRealization, LinkError> {
    if n == 0 || n > m {
        return Err(LinkError::InvalidArgument(format!("need 1 <= N <= M, got N={n}, M={m}")));
    }
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        data.push(C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2));
    }
    let h = CMatrix::from_row_major(n, m, data).map_err(PrecodeError::from)?;
    ChannelRealization::new(h)
}

/// AWGN level attached to an `E_s/N₀` set point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
    esn0_db: f64,
}

impl NoiseModel {
    /// `σ² = 10^(−dB/10)`; `+∞` dB is noiseless.
    pub fn from_esn0_db(esn0_db: f64) -> Result<Self, LinkError> {
        if esn0_db.is_nan() || esn0_db == f64::NEG_INFINITY {
            return Err(LinkError::InvalidArgument(format!("invalid Es/N0: {esn0_db}")));
        }
        let sigma2 = if esn0_db == f64::INFINITY { 0.0 } else { 10f64.powf(-esn0_db / 10.0) };
        Ok(NoiseModel { sigma2, esn0_db })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn esn0_db(&self) -> f64 {
        self.esn0_db
    }
}

/// Scales `x_raw` to `‖x‖² = n_users`; returns `(x, gamma)` with
/// `gamma = ‖x_raw‖²/n_users`.
pub fn normalize_transmit(x_raw: &[C64], n_users: usize) -> Result<(Vec<C64>, f64), LinkError> {
    if n_users == 0 {
        return Err(LinkError::InvalidArgument("N must be positive".into()));
    }
    let energy = norm_sq(x_raw);
    if !(energy > 0.0) {
        return Err(LinkError::ZeroBlock);
    }
    let gamma = energy / n_users as f64;
    if gamma == 1.0 {
        return Ok((x_raw.to_vec(), gamma));
    }
    let inv = 1.0 / gamma.sqrt();
    Ok((x_raw.iter().map(|z| z * inv).collect(), gamma))
}

/// `y = H·x + v` with `v` i.i.d. `CN(0, σ²)`. Exactly `2N` normals are drawn
/// even when `σ² = 0`, so stream consumption is independent of the SNR.
pub fn transmit<R: Rng + ?Sized>(ch: &ChannelRealization, x: &[C64], noise: &NoiseModel, rng: &mut R) -> Vec<C64> {
    assert_eq!(x.len(), ch.antennas(), "transmit vector length");
    let mut y = ch.h.mul_vec(x).expect("dimensions checked");
    for yn in &mut y {
        let v = complex_gaussian(rng, noise.sigma2);
        if noise.sigma2 > 0.0 {
            *yn += v;
        }
    }
    y
}

/// Receiver-side undo of the transmit scaling: `√gamma·y`.
pub fn receive_rescale(y: &[C64], gamma: f64) -> Vec<C64> {
    assert!(gamma > 0.0, "gamma must be positive");
    if gamma == 1.0 {
        return y.to_vec();
    }
    let s = gamma.sqrt();
    y.iter().map(|z| z * s).collect()
}

fn fold_axis(r: f64, tau: f64) -> f64 {
    let half = 0.5 * tau;
    if (-half..half).contains(&r) {
        return r;
    }
    let mut out = r - tau * (r / tau + 0.5).floor();
    // floor of a rounded quotient can land one period off
    while out >= half {
        out -= tau;
    }
    while out < -half {
        out += tau;
    }
    out
}

/// Folds each axis of `y` into `[−τ/2, τ/2)`.
pub fn modulo_fold(y: C64, tau: f64) -> C64 {
    debug_assert!(tau > 0.0);
    C64::new(fold_axis(y.re, tau), fold_axis(y.im, tau))
}

/// Hard decision for one user, optionally through the modulo stage.
pub fn demodulate(y: C64, cons: &Constellation, tau: f64, use_modulo: bool) -> usize {
    if use_modulo {
        cons.nearest_point(modulo_fold(y, tau))
    } else {
        cons.nearest_point(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::SUPPORTED_ORDERS;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn channel_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = 0.0;
        let mut count = 0usize;
        let mut mean = c(0.0, 0.0);
        while count < 1_000_000 {
            let ch = draw_channel(8, 8, &mut rng).unwrap();
            for z in ch.h().as_slice() {
                acc += z.norm_sqr();
                mean += z;
            }
            count += 64;
        }
        let m2 = acc / count as f64;
        assert!((m2 - 1.0).abs() < 0.01, "{m2}");
        assert!((mean / count as f64).norm() < 0.005);
    }

    #[test]
    fn channel_zf_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, m) in [(1, 1), (4, 4), (8, 12), (32, 32)] {
            let ch = draw_channel(n, m, &mut rng).unwrap();
            let r = ch.h().matmul(ch.w()).unwrap().sub(&CMatrix::identity(n)).unwrap().frobenius_norm();
            assert!(r <= 1e-8 * (n as f64).sqrt());
        }
        assert!(draw_channel(3, 2, &mut rng).is_err());
    }

    #[test]
    fn scalar_channel_inverse() {
        let h = c(0.3, -1.2);
        let ch = ChannelRealization::new(CMatrix::from_row_major(1, 1, vec![h]).unwrap()).unwrap();
        let want = h.conj() / h.norm_sqr();
        assert!((ch.w()[(0, 0)] - want).norm() < 1e-15);
    }

    #[test]
    fn channel_is_reproducible() {
        let a = draw_channel(4, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_channel(4, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let d = draw_channel(4, 6, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn noise_model_mapping() {
        assert_eq!(NoiseModel::from_esn0_db(0.0).unwrap().sigma2(), 1.0);
        assert!((NoiseModel::from_esn0_db(10.0).unwrap().sigma2() - 0.1).abs() < 1e-17);
        assert!((NoiseModel::from_esn0_db(-20.0).unwrap().sigma2() - 100.0).abs() < 1e-12);
        assert_eq!(NoiseModel::from_esn0_db(f64::INFINITY).unwrap().sigma2(), 0.0);
        assert!(NoiseModel::from_esn0_db(f64::NAN).is_err());
    }

    #[test]
    fn normalization_examples() {
        let x = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let (out, gamma) = normalize_transmit(&x, 2).unwrap();
        assert_eq!(gamma, 1.0);
        assert_eq!(out, x);

        let x0 = vec![c(0.3, -0.2), c(1.1, 0.4), c(-0.7, 0.0)];
        let x2: Vec<C64> = x0.iter().map(|z| z * 2.0).collect();
        let (a, ga) = normalize_transmit(&x0, 2).unwrap();
        let (b, gb) = normalize_transmit(&x2, 2).unwrap();
        assert!((gb / ga - 4.0).abs() < 1e-14);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() < 1e-15);
        }
        assert!((norm_sq(&a) - 2.0).abs() < 1e-10 * 2.0);
        assert_eq!(normalize_transmit(&[c(0.0, 0.0); 3], 2), Err(LinkError::ZeroBlock));
    }

    #[test]
    fn noiseless_transmit_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = draw_channel(3, 4, &mut rng).unwrap();
        let x = vec![c(0.5, 0.1), c(-0.2, 0.3), c(0.0, -1.0), c(0.9, 0.9)];
        let y = transmit(&ch, &x, &NoiseModel::from_esn0_db(f64::INFINITY).unwrap(), &mut rng);
        assert_eq!(y, ch.h().mul_vec(&x).unwrap());
    }

    #[test]
    fn noise_variance_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = draw_channel(4, 4, &mut rng).unwrap();
        let noise = NoiseModel::from_esn0_db(3.0).unwrap();
        let x = vec![c(0.0, 0.0); 4];
        let draws = 50_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..draws {
            for z in transmit(&ch, &x, &noise, &mut rng) {
                acc += z.norm_sqr();
                acc2 += z.norm_sqr().powi(2);
            }
        }
        let n = (draws * 4) as f64;
        let mean = acc / n;
        let se = ((acc2 / n - mean * mean) / n).sqrt();
        assert!((mean - noise.sigma2()).abs() < 3.0 * se, "{mean} vs {}", noise.sigma2());
    }

    #[test]
    fn transmit_is_reproducible() {
        let ch = draw_channel(2, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let noise = NoiseModel::from_esn0_db(5.0).unwrap();
        let a = transmit(&ch, &x, &noise, &mut ChaCha8Rng::seed_from_u64(6));
        let b = transmit(&ch, &x, &noise, &mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(a, b);
    }

    #[test]
    fn rescale_examples() {
        let y = vec![c(1.0, -2.0)];
        assert_eq!(receive_rescale(&y, 1.0), y);
        assert_eq!(receive_rescale(&[c(1.0, 0.0)], 4.0), vec![c(2.0, 0.0)]);
    }

    #[test]
    fn zf_pipeline_recovers_symbols() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cons = Constellation::make_qam(16).unwrap();
        let ch = draw_channel(6, 6, &mut rng).unwrap();
        let s = cons.symbols(&[0, 3, 5, 9, 12, 15]);
        let x_raw = ch.w().mul_vec(&s).unwrap();
        let (x, gamma) = normalize_transmit(&x_raw, 6).unwrap();
        let y = transmit(&ch, &x, &NoiseModel::from_esn0_db(f64::INFINITY).unwrap(), &mut rng);
        for (a, b) in receive_rescale(&y, gamma).iter().zip(&s) {
            assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn fold_examples() {
        assert_eq!(modulo_fold(c(0.3, 0.2), 2.5), c(0.3, 0.2));
        let f = modulo_fold(c(1.4, 0.0), 2.5);
        assert!((f.re + 1.1).abs() < 1e-15);
        // half-open boundary
        assert_eq!(modulo_fold(c(1.25, -1.25), 2.5), c(-1.25, -1.25));
        assert_eq!(modulo_fold(c(3.75, 0.0), 2.5).re, -1.25);
    }

    #[test]
    fn fold_undoes_lattice_shifts() {
        let cons = Constellation::make_qam(64).unwrap();
        let tau = 2.5;
        for l in [0, 9, 27, 63] {
            let s = cons.point(l);
            for k1 in -8..=8 {
                for k2 in -8..=8 {
                    let y = s + c(k1 as f64, k2 as f64) * tau;
                    assert!((modulo_fold(y, tau) - s).norm() < 1e-12);
                    assert_eq!(demodulate(y, &cons, tau, true), l);
                }
            }
        }
    }

    #[test]
    fn demodulate_direct_path() {
        for l in SUPPORTED_ORDERS {
            let cons = Constellation::make_qam(l).unwrap();
            let eps = c(0.3, -0.4) * cons.scale();
            for i in [0, l / 2, l - 1] {
                assert_eq!(demodulate(cons.point(i) + eps, &cons, 2.5, false), i);
            }
        }
    }

    proptest! {
        #[test]
        fn fold_range_and_idempotence(re in -1e3f64..1e3, im in -1e3f64..1e3, tau in 0.1f64..10.0) {
            let f = modulo_fold(c(re, im), tau);
            prop_assert!(f.re >= -tau / 2.0 && f.re < tau / 2.0);
            prop_assert!(f.im >= -tau / 2.0 && f.im < tau / 2.0);
            prop_assert_eq!(modulo_fold(f, tau), f);
        }

        #[test]
        fn fold_is_periodic(re in -5.0f64..5.0, im in -5.0f64..5.0, k1 in -20i32..20, k2 in -20i32..20) {
            let tau = 2.5;
            let y = c(re, im);
            let shifted = y + c(k1 as f64, k2 as f64) * tau;
            let (a, b) = (modulo_fold(y, tau), modulo_fold(shifted, tau));
            // values at the seam may land on opposite ends
            let dr = (a.re - b.re).abs();
            let di = (a.im - b.im).abs();
            prop_assert!(dr < 1e-12 || (dr - tau).abs() < 1e-12);
            prop_assert!(di < 1e-12 || (di - tau).abs() < 1e-12);
        }

        #[test]
        fn rescale_undoes_normalization(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = draw_channel(3, 3, &mut rng).unwrap();
            let x_raw: Vec<C64> = (0..3).map(|_| complex_gaussian(&mut rng, 1.0) * 3.0).collect();
            let (x, gamma) = normalize_transmit(&x_raw, 3).unwrap();
            let y = receive_rescale(&ch.h().mul_vec(&x).unwrap(), gamma);
            let direct = ch.h().mul_vec(&x_raw).unwrap();
            for (a, b) in y.iter().zip(&direct) {
                prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
            }
        }
    }
}
