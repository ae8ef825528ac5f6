use cstmm::dirstats::{squared_cosine, UnitSphereVector};
use cstmm::evaluation::{compute_sdr, holm_correction, wilcoxon_signed_rank};
use cstmm::signal_io::{istft, stft, MultichannelWaveform, StftConfig, Window};
use num_complex::Complex64;
use proptest::prelude::*;

fn unit(v: &[(f64, f64)]) -> Option<UnitSphereVector> {
    UnitSphereVector::normalized(v.iter().map(|&(re, im)| Complex64::new(re, im)).collect()).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn holm_is_bounded_and_order_preserving(p in prop::collection::vec(0.0f64..=1.0, 1..12)) {
        let adj = holm_correction(&p);
        prop_assert_eq!(adj.len(), p.len());
        for (raw, a) in p.iter().zip(&adj) {
            prop_assert!(*a >= *raw - 1e-15 && *a <= 1.0);
        }
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(adj[i] <= adj[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn wilcoxon_is_symmetric_under_sign_flip(d in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let a = wilcoxon_signed_rank(&d);
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let b = wilcoxon_signed_rank(&neg);
        prop_assert!((0.0..=1.0).contains(&a.p));
        prop_assert!((a.p - b.p).abs() <= 1e-12, "{} vs {}", a.p, b.p);
        prop_assert_eq!(a.n, b.n);
    }

    #[test]
    fn squared_cosine_is_a_phase_invariant_unit_quantity(
        a in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
        z in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let (Some(a), Some(z)) = (unit(&a), unit(&z)) else { return Ok(()) };
        let r = squared_cosine(a.as_slice(), z.as_slice());
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r));
        let rot: Vec<Complex64> = z.as_slice().iter().map(|c| c * Complex64::from_polar(1.0, phase)).collect();
        prop_assert!((squared_cosine(a.as_slice(), &rot) - r).abs() <= 1e-12);
    }

    #[test]
    fn sdr_ignores_estimate_gain(
        noise in prop::collection::vec(-0.3f64..0.3, 400),
        gain in 0.1f64..10.0,
    ) {
        let reference: Vec<f64> = (0..400).map(|t| (t as f64 * 0.07).sin() + 0.5 * (t as f64 * 0.31).cos()).collect();
        let est: Vec<f64> = reference.iter().zip(&noise).map(|(r, n)| r + n).collect();
        let scaled: Vec<f64> = est.iter().map(|x| x * gain).collect();
        let a = compute_sdr(&[est], &[reference.clone()], 16).unwrap();
        let b = compute_sdr(&[scaled], &[reference], 16).unwrap();
        prop_assert!((a.sdr[0] - b.sdr[0]).abs() <= 1e-8, "{} vs {}", a.sdr[0], b.sdr[0]);
    }

    #[test]
    fn stft_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 256),
        y in prop::collection::vec(-1.0f64..1.0, 256),
        c in -3.0f64..3.0,
    ) {
        let cfg = StftConfig { window_length: 64, dft_length: 64, hop: 16, window: Window::SqrtHann };
        let w = |v: Vec<f64>| MultichannelWaveform::from_channels(vec![v], 16000).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + c * b).collect();
        let (sx, sy, ss) = (stft(&w(x), &cfg).unwrap(), stft(&w(y), &cfg).unwrap(), stft(&w(sum.clone()), &cfg).unwrap());
        for ((p, q), r) in sx.coefficients.iter().zip(sy.coefficients.iter()).zip(ss.coefficients.iter()) {
            prop_assert!((p + q * c - r).norm() <= 1e-10);
        }
        let back = istft(&ss).unwrap();
        // interior samples are fully covered by overlapping frames
        for t in 64..192 {
            prop_assert!((back.channel(0)[t] - sum[t]).abs() <= 1e-10);
        }
    }
}
