//! Physics oracles for the diffraction primitives: the FFT transfer-function
//! path is checked against a direct O(N^4) summation of the sampled spatial
//! impulse response, adjoints are checked against the inner-product identity,
//! and every vjp is checked against central finite differences.

use ndarray::Array2;
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use donn_core::field::{inner, ComplexField};
use donn_core::optics::{
    detect, detect_vjp, make_transfer_function, modulate, modulate_vjp, propagate, propagate_vjp,
    DetectorLayout, PropagationConfig,
};

/// Test geometry whose sampled spatial kernel and sampled transfer function
/// are exact discrete Fourier pairs (`lambda * z = N * pitch^2`, N even), so
/// the spectral path and the direct summation agree to round-off rather than
/// to aliasing error.
fn matched_cfg(n: usize) -> PropagationConfig {
    let wavelength = 532e-9;
    let pixel_pitch = 36e-6;
    let distance = n as f64 * pixel_pitch * pixel_pitch / wavelength;
    PropagationConfig {
        wavelength,
        distance,
        grid_size: n,
        pixel_pitch,
        pad_factor: 1,
    }
}

fn random_field(n: usize, pitch: f64, rng: &mut ChaCha8Rng) -> ComplexField<f64> {
    let data = Array2::from_shape_fn((n, n), |_| {
        Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    ComplexField::new(data, pitch).unwrap()
}

/// Direct summation of the sampled free-space impulse response:
/// `out[m,n] = sum_{p,q} f[p,q] h((m-p) pitch, (n-q) pitch, z) pitch^2`.
fn direct_propagate(f: &ComplexField<f64>, cfg: &PropagationConfig) -> Array2<Complex<f64>> {
    let n = f.n();
    let k = cfg.wavenumber();
    let z = cfg.distance;
    let pitch = cfg.pixel_pitch;
    let prefactor = Complex::new(0.0, 1.0).inv() / (cfg.wavelength * z) * pitch * pitch
        * Complex::from_polar(1.0, k * z);
    let mut out = Array2::zeros((n, n));
    for m in 0..n {
        for nn in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for p in 0..n {
                for q in 0..n {
                    let dx = (m as f64 - p as f64) * pitch;
                    let dy = (nn as f64 - q as f64) * pitch;
                    let chirp = Complex::from_polar(1.0, k / (2.0 * z) * (dx * dx + dy * dy));
                    acc += f.data()[[p, q]] * chirp;
                }
            }
            out[[m, nn]] = acc * prefactor;
        }
    }
    out
}

#[test]
fn impulse_matches_direct_summation_elementwise() {
    let cfg = matched_cfg(16);
    let tf = make_transfer_function::<f64>(&cfg).unwrap();
    let mut data = Array2::zeros((16, 16));
    data[[8, 8]] = Complex::new(1.0, 0.0);
    let f = ComplexField::new(data, cfg.pixel_pitch).unwrap();

    let got = propagate(&f, &tf).unwrap();
    let want = direct_propagate(&f, &cfg);
    for (g, w) in got.data().iter().zip(want.iter()) {
        let rel = (g - w).norm() / w.norm();
        assert!(rel < 1e-6, "elementwise rel error {rel}");
    }
}

#[test]
fn random_fields_match_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in [8usize, 12, 16] {
        let cfg = matched_cfg(n);
        let tf = make_transfer_function::<f64>(&cfg).unwrap();
        let f = random_field(n, cfg.pixel_pitch, &mut rng);
        let got = propagate(&f, &tf).unwrap();
        let want = direct_propagate(&f, &cfg);
        let num: f64 = got
            .data()
            .iter()
            .zip(want.iter())
            .map(|(g, w)| (g - w).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = want.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
        let rel = num / den;
        assert!(rel < 1e-6, "n={n}: rel error {rel}");
    }
}

#[test]
fn energy_conserved_over_many_random_fields() {
    let cfg = PropagationConfig {
        wavelength: 532e-9,
        distance: 0.2794,
        grid_size: 16,
        pixel_pitch: 36e-6,
        pad_factor: 1,
    };
    let tf = make_transfer_function::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let f = random_field(16, cfg.pixel_pitch, &mut rng);
        let out = propagate(&f, &tf).unwrap();
        let rel = (out.energy() - f.energy()).abs() / f.energy();
        worst = worst.max(rel);
    }
    assert!(worst < 1e-12, "worst energy drift {worst}");
}

#[test]
fn adjoint_identity_for_propagate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pad in [1usize, 2] {
        let cfg = PropagationConfig {
            wavelength: 532e-9,
            distance: 0.1,
            grid_size: 16,
            pixel_pitch: 36e-6,
            pad_factor: pad,
        };
        let tf = make_transfer_function::<f64>(&cfg).unwrap();
        let x = random_field(16, cfg.pixel_pitch, &mut rng);
        let y = random_field(16, cfg.pixel_pitch, &mut rng);
        let lhs = inner(&propagate(&x, &tf).unwrap(), &y);
        let rhs = inner(&x, &propagate_vjp(&y, &tf).unwrap());
        let scale = x.energy().sqrt() * y.energy().sqrt();
        let rel = (lhs - rhs).norm() / scale;
        assert!(rel < 1e-12, "pad={pad}: adjoint defect {rel}");
    }
}

#[test]
fn identity_kernel_vjp_is_identity() {
    // z chosen so the chirp vanishes at every sampled frequency is not
    // physical; instead check vjp(propagate) recovers the input:
    // P^dagger P = I because |H| = 1.
    let cfg = matched_cfg(12);
    let tf = make_transfer_function::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_field(12, cfg.pixel_pitch, &mut rng);
    let roundtrip = propagate_vjp(&propagate(&x, &tf).unwrap(), &tf).unwrap();
    for (a, b) in roundtrip.data().iter().zip(x.data().iter()) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn adjoint_identity_for_modulate() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pitch = 36e-6;
    let x = random_field(12, pitch, &mut rng);
    let y = random_field(12, pitch, &mut rng);
    let m = Array2::from_shape_fn((12, 12), |_| {
        Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let lhs = inner(&modulate(&x, &m).unwrap(), &y);
    let (g_f, _) = modulate_vjp(&y, &x, &m).unwrap();
    let rhs = inner(&x, &g_f);
    let rel = (lhs - rhs).norm() / (x.energy().sqrt() * y.energy().sqrt());
    assert!(rel < 1e-12, "adjoint defect {rel}");
}

#[test]
fn composition_of_distances_is_one_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let base = PropagationConfig {
        wavelength: 532e-9,
        distance: 0.08,
        grid_size: 16,
        pixel_pitch: 36e-6,
        pad_factor: 1,
    };
    let z1 = 0.08;
    let z2 = 0.13;
    let tf1 = make_transfer_function::<f64>(&PropagationConfig {
        distance: z1,
        ..base.clone()
    })
    .unwrap();
    let tf2 = make_transfer_function::<f64>(&PropagationConfig {
        distance: z2,
        ..base.clone()
    })
    .unwrap();
    let tf12 = make_transfer_function::<f64>(&PropagationConfig {
        distance: z1 + z2,
        ..base.clone()
    })
    .unwrap();
    let f = random_field(16, base.pixel_pitch, &mut rng);
    let two_step = propagate(&propagate(&f, &tf1).unwrap(), &tf2).unwrap();
    let one_step = propagate(&f, &tf12).unwrap();
    let num: f64 = two_step
        .data()
        .iter()
        .zip(one_step.data().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let rel = num / one_step.energy().sqrt();
    assert!(rel < 1e-10, "composition defect {rel}");
}

/// Central finite differences of a real scalar loss with respect to the
/// real and imaginary parts of the input field.
fn fd_field_grad(
    loss: &dyn Fn(&ComplexField<f64>) -> f64,
    x: &ComplexField<f64>,
    h: f64,
) -> Array2<Complex<f64>> {
    let n = x.n();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut plus = x.clone();
            plus.data_mut()[[i, j]].re += h;
            let mut minus = x.clone();
            minus.data_mut()[[i, j]].re -= h;
            let dre = (loss(&plus) - loss(&minus)) / (2.0 * h);

            let mut plus = x.clone();
            plus.data_mut()[[i, j]].im += h;
            let mut minus = x.clone();
            minus.data_mut()[[i, j]].im -= h;
            let dim = (loss(&plus) - loss(&minus)) / (2.0 * h);
            g[[i, j]] = Complex::new(dre, dim);
        }
    }
    g
}

fn max_rel(analytic: &Array2<Complex<f64>>, fd: &Array2<Complex<f64>>) -> f64 {
    let scale = fd.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).norm() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn propagate_gradient_matches_finite_differences() {
    let cfg = PropagationConfig {
        wavelength: 532e-9,
        distance: 0.05,
        grid_size: 8,
        pixel_pitch: 36e-6,
        pad_factor: 1,
    };
    let tf = make_transfer_function::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random_field(8, cfg.pixel_pitch, &mut rng);
    // quadratic loss: sum w |out|^2 with fixed positive weights
    let w = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>() + 0.5);
    let loss = |f: &ComplexField<f64>| -> f64 {
        let out = propagate(f, &tf).unwrap();
        out.data()
            .iter()
            .zip(w.iter())
            .map(|(z, &wi)| wi * z.norm_sqr())
            .sum()
    };
    // analytic: dL/d out = 2 w out (component convention), then the adjoint
    let out = propagate(&x, &tf).unwrap();
    let g_out_data = Array2::from_shape_fn((8, 8), |(i, j)| out.data()[[i, j]] * (2.0 * w[[i, j]]));
    let g_out = ComplexField::new(g_out_data, cfg.pixel_pitch).unwrap();
    let analytic = propagate_vjp(&g_out, &tf).unwrap();
    let fd = fd_field_grad(&loss, &x, 1e-6);
    let rel = max_rel(analytic.data(), &fd);
    assert!(rel < 1e-6, "propagate FD mismatch {rel}");
}

#[test]
fn modulate_gradient_matches_finite_differences() {
    let pitch = 36e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random_field(6, pitch, &mut rng);
    let m = Array2::from_shape_fn((6, 6), |_| {
        Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let w = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() + 0.5);
    let loss_of = |f: &ComplexField<f64>| -> f64 {
        let out = modulate(f, &m).unwrap();
        out.data()
            .iter()
            .zip(w.iter())
            .map(|(z, &wi)| wi * z.norm_sqr())
            .sum()
    };
    let out = modulate(&x, &m).unwrap();
    let g_out_data = Array2::from_shape_fn((6, 6), |(i, j)| out.data()[[i, j]] * (2.0 * w[[i, j]]));
    let g_out = ComplexField::new(g_out_data, pitch).unwrap();
    let (analytic, _) = modulate_vjp(&g_out, &x, &m).unwrap();
    let fd = fd_field_grad(&loss_of, &x, 1e-6);
    let rel = max_rel(analytic.data(), &fd);
    assert!(rel < 1e-6, "modulate FD mismatch (field) {rel}");

    // and with respect to the modulation itself
    let loss_of_m = |mm: &Array2<Complex<f64>>| -> f64 {
        let out = modulate(&x, mm).unwrap();
        out.data()
            .iter()
            .zip(w.iter())
            .map(|(z, &wi)| wi * z.norm_sqr())
            .sum()
    };
    let (_, analytic_m) = modulate_vjp(&g_out, &x, &m).unwrap();
    let mut fd_m = Array2::zeros((6, 6));
    let h = 1e-6;
    for i in 0..6 {
        for j in 0..6 {
            let mut plus = m.clone();
            plus[[i, j]].re += h;
            let mut minus = m.clone();
            minus[[i, j]].re -= h;
            let dre = (loss_of_m(&plus) - loss_of_m(&minus)) / (2.0 * h);
            let mut plus = m.clone();
            plus[[i, j]].im += h;
            let mut minus = m.clone();
            minus[[i, j]].im -= h;
            let dim = (loss_of_m(&plus) - loss_of_m(&minus)) / (2.0 * h);
            fd_m[[i, j]] = Complex::new(dre, dim);
        }
    }
    let rel = max_rel(&analytic_m, &fd_m);
    assert!(rel < 1e-6, "modulate FD mismatch (modulation) {rel}");
}

#[test]
fn detect_matches_double_loop_and_finite_differences() {
    let n = 20;
    let pitch = 36e-6;
    let layout = DetectorLayout::evenly_spaced(n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x = random_field(n, pitch, &mut rng);

    // brute-force double loop oracle
    let got = detect(&x, &layout).unwrap();
    for (c, r) in layout.regions().iter().enumerate() {
        let mut want = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i >= r.row && i < r.row + r.height && j >= r.col && j < r.col + r.width {
                    want += x.data()[[i, j]].norm_sqr();
                }
            }
        }
        assert_eq!(got[c], want, "region {c}");
    }

    // finite differences through a weighted readout loss
    let wts: Vec<f64> = (0..10).map(|i| 0.3 + 0.11 * i as f64).collect();
    let loss = |f: &ComplexField<f64>| -> f64 {
        detect(f, &layout)
            .unwrap()
            .iter()
            .zip(&wts)
            .map(|(d, w)| d * w)
            .sum()
    };
    let analytic = detect_vjp(&wts, &x, &layout).unwrap();
    let fd = fd_field_grad(&loss, &x, 1e-6);
    let rel = max_rel(analytic.data(), &fd);
    assert!(rel < 1e-6, "detect FD mismatch {rel}");

    // adjoint identity for the linearized detect map
    let lhs: f64 = got.iter().zip(&wts).map(|(d, w)| d * w).sum::<f64>() * 2.0;
    let rhs = inner(&x, &analytic).re;
    assert!((lhs - rhs).abs() / lhs.abs() < 1e-12);
}
