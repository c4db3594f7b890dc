use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;

use sspd::distill::{ema_update, inverse_snr};
use sspd::model::{linear_attention, ModelConfig, Network};
use sspd::signal::{self, PowerSpectrum, RealSignal, HR_BAND_HI, HR_BAND_LO};

fn signal_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-1.0..-0.01, 0.01..1.0f64], min..max)
}

fn tensor(v: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssm_is_symmetric_with_unit_diagonal(x in signal_strategy(8, 80), w in 1usize..8) {
        prop_assume!(w <= x.len());
        let sig = RealSignal::new(x.clone(), 30.0).unwrap();
        let tokens = signal::tokenize(&sig, w).unwrap();
        prop_assert_eq!(tokens.len(), x.len() - w + 1);
        let map = signal::self_similarity_map(&tokens).unwrap();
        for j in 0..map.size() {
            prop_assert!((map.get(j, j) - 1.0).abs() <= 1e-6);
            for k in 0..map.size() {
                prop_assert_eq!(map.get(j, k), map.get(k, j));
                prop_assert!(map.get(j, k).abs() <= 1.0 + 1e-6);
            }
        }
        let wave = signal::self_similarity_wave(&map);
        prop_assert!((wave.values()[0] - 1.0).abs() <= 1e-6);
        prop_assert!(wave.values().iter().all(|v| v.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn psd_ignores_gain_and_offset(x in signal_strategy(8, 120), a in 0.01..100.0f64, b in -10.0..10.0f64) {
        let p = signal::normalized_psd(&RealSignal::new(x.clone(), 30.0).unwrap());
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let q = signal::normalized_psd(&RealSignal::new(y, 30.0).unwrap()).unwrap();
        prop_assert!((p.density.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (u, v) in p.density.iter().zip(&q.density) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn snr_grows_with_in_band_mass(raw in prop::collection::vec(0.01..1.0f64, 150), shift in 0.01..0.5f64, k in 0.1..10.0f64) {
        let freqs = signal::psd_freqs(300, 30.0);
        let total: f64 = raw.iter().sum();
        let density: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let spec = PowerSpectrum { freqs: freqs.clone(), density: density.clone() };
        let base = signal::band_snr(&spec, HR_BAND_LO, HR_BAND_HI).unwrap();

        let scaled = PowerSpectrum { freqs: freqs.clone(), density: density.iter().map(|d| d * k).collect() };
        let s = signal::band_snr(&scaled, HR_BAND_LO, HR_BAND_HI).unwrap();
        prop_assert!((s - base).abs() <= 1e-6 * base.max(1.0));

        let inside = freqs.iter().position(|&f| f >= HR_BAND_LO).unwrap();
        let outside = freqs.iter().position(|&f| f > HR_BAND_HI).unwrap();
        let mut moved = density.clone();
        let m = shift * moved[outside];
        moved[outside] -= m;
        moved[inside] += m;
        let more = signal::band_snr(&PowerSpectrum { freqs, density: moved }, HR_BAND_LO, HR_BAND_HI).unwrap();
        prop_assert!(more > base);
    }

    #[test]
    fn negative_pearson_tracks_sign_of_gain(x in signal_strategy(4, 60), a in 0.01..50.0f64, b in -5.0..5.0f64) {
        let xs = RealSignal::new(x.clone(), 30.0).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 - (x.iter().sum::<f64>() / x.len() as f64).powi(2);
        prop_assume!(var > 1e-6);
        let pos = RealSignal::new(x.iter().map(|v| a * v + b).collect(), 30.0).unwrap();
        let neg = RealSignal::new(x.iter().map(|v| -a * v + b).collect(), 30.0).unwrap();
        prop_assert!(signal::negative_pearson(&xs, &pos).unwrap().abs() <= 1e-9);
        prop_assert!((signal::negative_pearson(&xs, &neg).unwrap() - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn peak_hr_of_sinusoids(f in 0.7..4.0f64, phase in 0.0..(2.0 * PI)) {
        let x: Vec<f64> = (0..600).map(|n| (2.0 * PI * f * n as f64 / 30.0 + phase).sin()).collect();
        let hr = signal::estimate_hr_from_peaks(&RealSignal::new(x, 30.0).unwrap()).unwrap();
        prop_assert!((hr - 60.0 * f).abs() <= 1.0, "{} vs {}", hr, 60.0 * f);
    }

    #[test]
    fn metrics_match_direct_formulas(pairs in prop::collection::vec((40.0..180.0f64, 40.0..180.0f64), 2..50)) {
        let (pred, gt): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = signal::hr_metrics(&pred, &gt).unwrap();
        let n = pred.len() as f64;
        let e: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| p - g).collect();
        let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
        let rmse = (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let me = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|v| (v - me) * (v - me)).sum::<f64>() / n).sqrt();
        let (mp, mg) = (pred.iter().sum::<f64>() / n, gt.iter().sum::<f64>() / n);
        let cov: f64 = pred.iter().zip(&gt).map(|(p, g)| (p - mp) * (g - mg)).sum();
        let vp: f64 = pred.iter().map(|p| (p - mp) * (p - mp)).sum();
        let vg: f64 = gt.iter().map(|g| (g - mg) * (g - mg)).sum();
        prop_assert!((m.mae - mae).abs() <= 1e-9);
        prop_assert!((m.rmse - rmse).abs() <= 1e-9);
        prop_assert!((m.sd - sd).abs() <= 1e-9);
        prop_assert!((m.r.unwrap() - cov / (vp.sqrt() * vg.sqrt())).abs() <= 1e-9);
        prop_assert!(m.rmse >= m.mae && m.mae >= 0.0);
        prop_assert!(m.rmse * m.rmse >= m.sd * m.sd - 1e-9);
    }

    #[test]
    fn attention_is_linear_in_values(
        q in prop::collection::vec(-1.0..1.0f64, 48),
        k in prop::collection::vec(-1.0..1.0f64, 48),
        v in prop::collection::vec(-1.0..1.0f64, 48),
        c in -5.0..5.0f64,
    ) {
        let (q, k, v) = (tensor(q, &[1, 6, 8]), tensor(k, &[1, 6, 8]), tensor(v, &[1, 6, 8]));
        let a = linear_attention(&q, &k, &v, 2).unwrap();
        let b = linear_attention(&q, &k, &(&v * c).unwrap(), 2).unwrap();
        let diff = ((a * c).unwrap() - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        prop_assert!(diff <= 1e-6);
    }

    #[test]
    fn inverse_snr_is_gain_invariant(x in prop::collection::vec(-1.0..1.0f64, 64), a in 0.1..10.0f64) {
        let t = tensor(x.clone(), &[1, 64]);
        let u = inverse_snr(&t, 30.0, (HR_BAND_LO, HR_BAND_HI)).unwrap();
        let v = inverse_snr(&(&t * a).unwrap(), 30.0, (HR_BAND_LO, HR_BAND_HI)).unwrap();
        let (u, v) = (u.to_vec1::<f64>().unwrap()[0], v.to_vec1::<f64>().unwrap()[0]);
        prop_assert!((u - v).abs() <= 1e-6 * u.abs().max(1e-3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pyramid_sizes_follow_windows(windows in prop::collection::vec(prop::sample::select(vec![3usize, 5, 7, 9]), 1..4), t in 40usize..70) {
        let cfg = ModelConfig { block_channels: vec![4, 8], windows: windows.clone(), heads: 2, ..ModelConfig::default() };
        let net = Network::new(cfg.clone()).unwrap();
        let params = net.init_params(DType::F32, 1).unwrap();
        let v = Tensor::randn(0f32, 0.1, (1, t, 3, 8, 8), &Device::Cpu).unwrap();
        let out = net.forward(&params.view(false), &v).unwrap();
        let mut expected = Vec::new();
        let mut cur = t;
        for w in &windows {
            cur -= w - 1;
            expected.push(cur);
        }
        let got: Vec<usize> = out.pyramid.maps.iter().map(|m| m.dim(1).unwrap()).collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(cfg.token_counts(t).unwrap(), expected);
        prop_assert_eq!(out.rppg.dims(), &[1, t]);
    }

    #[test]
    fn ema_endpoints(rho_bits in 0u8..=2) {
        let rho = rho_bits as f64 / 2.0;
        let net = Network::new(ModelConfig { block_channels: vec![4], windows: vec![3], heads: 2, ..ModelConfig::default() }).unwrap();
        let online = net.init_params(DType::F64, 1).unwrap();
        let target = net.init_params(DType::F64, 2).unwrap();
        let before = target.deep_clone().unwrap();
        ema_update(&target, &online, rho).unwrap();
        for (name, t) in target.iter() {
            let got = t.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let o = online.var(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let b = before.var(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for i in 0..got.len() {
                prop_assert!((got[i] - (rho * b[i] + (1.0 - rho) * o[i])).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn backbone_preserves_sequence_length() {
    let net = Network::new(ModelConfig::default()).unwrap();
    let params = net.init_params(DType::F32, 0).unwrap();
    for t in [64, 150, 300] {
        let v = Tensor::randn(0f32, 0.1, (1, t, 3, 16, 16), &Device::Cpu).unwrap();
        let (_, s) = net.backbone_forward(&params.view(false), &v).unwrap();
        assert_eq!(s.dims(), &[1, t, 256]);
        let y = net.inference_forward(&params.view(false), &v).unwrap();
        assert_eq!(y.dims(), &[1, t]);
    }
}
