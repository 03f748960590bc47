//! The 2-D real FFT against a direct DFT, brute-force circular convolution,
//! linearity and Parseval.

use proptest::prelude::*;
use sfaunet::check::module_gradcheck;
use sfaunet::gradcheck::GradCheckConfig;
use sfaunet::spectral::{half_width, irfft2, multiply_spectra, rfft2, SpectralBypass, SpectralTransform};
use sfaunet::{Fill, Mode, Rng, Tensor};

mod common;
use common::{circular_conv, dft_bin};

fn image(n: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor {
    Tensor::create(&[n, c, h, w], Fill::Uniform { lo: -1.0, hi: 1.0, rng }).unwrap()
}

#[test]
fn forward_transform_matches_direct_dft() {
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let h = rng.range_inclusive(2, 16);
        let w = rng.range_inclusive(2, 16);
        let x = image(1, 1, h, w, &mut rng);
        let s = rfft2(&x).unwrap();
        assert_eq!(s.half_width, half_width(w));
        for k in 0..h {
            for l in 0..half_width(w) {
                let (re, im) = dft_bin(x.data(), h, w, k, l);
                let got = s.bin(0, 0, k, l);
                worst = worst.max((got.re - re).abs()).max((got.im - im).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst:e}");
}

#[test]
fn inverse_recovers_input() {
    let mut rng = Rng::new(7);
    for _ in 0..50 {
        let (h, w) = (rng.range_inclusive(2, 16), rng.range_inclusive(2, 16));
        let x = image(2, 3, h, w, &mut rng);
        let back = irfft2(&rfft2(&x).unwrap(), w).unwrap();
        assert!(back.max_abs_diff(&x) <= 1e-10);
    }
}

#[test]
fn convolution_theorem_matches_brute_force() {
    let mut rng = Rng::new(11);
    for _ in 0..10 {
        let (h, w) = (16, 16);
        let a = image(1, 1, h, w, &mut rng);
        let b = image(1, 1, h, w, &mut rng);
        let spectral = irfft2(&multiply_spectra(&rfft2(&a).unwrap(), &rfft2(&b).unwrap()).unwrap(), w).unwrap();
        let direct = circular_conv(a.data(), b.data(), h, w);
        let err = spectral.data().iter().zip(&direct).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err:e}");
    }
}

#[test]
fn spectral_transform_gradients() {
    let mut rng = Rng::new(5);
    for (c, h, w) in [(1, 4, 4), (2, 5, 6), (4, 8, 8)] {
        let st = SpectralTransform::new(c, &mut rng).unwrap();
        let x = image(2, c, h, w, &mut rng);
        let cfg = GradCheckConfig { relative_floor: 1e-6, ..Default::default() };
        let r = module_gradcheck(&st, &[x], |m, v| m.forward(&v[0], Mode::Train), cfg).unwrap();
        assert!(r.passes(1e-4), "{c}x{h}x{w}: {:.3e} at {:?}", r.max_rel_err, r.worst);
    }
}

#[test]
fn identity_frequency_map_passes_input_through() {
    let mut rng = Rng::new(8);
    for (c, h, w) in [(1, 4, 4), (3, 6, 5), (2, 9, 16)] {
        let mut st = SpectralTransform::new(c, &mut rng).unwrap();
        let eye: Vec<f64> = (0..4 * c * c).map(|i| if i / (2 * c) == i % (2 * c) { 1.0 } else { 0.0 }).collect();
        st.conv.weight = Tensor::new(&[2 * c, 2 * c, 1, 1], eye).unwrap();
        st.conv.bias = Tensor::zeros(&[2 * c]).unwrap();
        st.bypass = SpectralBypass { norm: true, activation: true };
        let x = image(2, c, h, w, &mut rng);
        assert!(st.forward(&x, Mode::Eval).unwrap().max_abs_diff(&x) <= 1e-8);
    }
}

#[test]
fn one_pixel_reaches_every_output_position() {
    let mut rng = Rng::new(21);
    for _ in 0..5 {
        let st = SpectralTransform::new(2, &mut rng).unwrap();
        let x = image(1, 2, 8, 8, &mut rng);
        let base = st.forward(&x, Mode::Eval).unwrap();
        let mut d = x.to_vec();
        d[rng.range_inclusive(0, 63)] += 1.0;
        let moved = st.forward(&Tensor::new(&[1, 2, 8, 8], d).unwrap(), Mode::Eval).unwrap();
        assert!(moved.data().iter().zip(base.data()).all(|(a, b)| (a - b).abs() > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linearity(h in 2usize..=16, w in 2usize..=16, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = image(1, 2, h, w, &mut rng);
        let y = image(1, 2, h, w, &mut rng);
        let combo = x.mul(a).unwrap().add(&y.mul(b).unwrap()).unwrap();
        let lhs = rfft2(&combo).unwrap();
        let (fx, fy) = (rfft2(&x).unwrap(), rfft2(&y).unwrap());
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - (a * fx.data[i] + b * fy.data[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn parseval(h in 2usize..=16, w in 2usize..=16, seed in any::<u64>()) {
        let x = image(1, 1, h, w, &mut Rng::new(seed));
        let s = rfft2(&x).unwrap();
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let mut spec = 0.0;
        for k in 0..h {
            for l in 0..half_width(w) {
                // stored bins stand for themselves and their conjugate
                // mirror, except DC and (for even W) Nyquist columns
                let weight = if l == 0 || (w % 2 == 0 && l == w / 2) { 1.0 } else { 2.0 };
                spec += weight * s.bin(0, 0, k, l).norm_sqr();
            }
        }
        prop_assert!((energy - spec / (h * w) as f64).abs() <= 1e-8);
    }
}
