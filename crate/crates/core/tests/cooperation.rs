//! End-to-end behaviour of the relaying schemes over the emulated network.

use coop_ofdm::channel::{noise_floor, FadingKind, FadingModel, LinkChannel, NodeClock};
use coop_ofdm::harness::metrics::per_sigma;
use coop_ofdm::harness::{
    compute_ber, compute_per, make_topology, run_trial, TopologyConfig, TopologyKind, TopologyParams, TrialOptions,
    TrialResult, TrialSpec,
};
use coop_ofdm::nodes::{run_exchange, CfoMode, ExchangeConfig, Links, Radio, Receiver, ReceiverConfig, Scheme};
use coop_ofdm::phy::{Frame, ModulationScheme, SystemParams, Transmitter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn colocated(att: f64, fading: FadingModel) -> TopologyConfig {
    make_topology(TopologyKind::Colocated, TopologyParams { attenuation_db: Some(att), ..Default::default() }, fading).unwrap()
}

fn trial(scheme: Scheme, topology: TopologyConfig, n: u64, seed: u64, options: TrialOptions) -> TrialResult {
    run_trial(&TrialSpec { scheme, topology, modulation: ModulationScheme::Qpsk, n_packets: n, seed, options }).unwrap()
}

#[test]
fn misalignment_inside_the_prefix_is_absorbed() {
    // 25 dB mean SNR on the source and relay links to the destination.
    let topo = colocated(15.0, FadingModel::flat());
    let run = |mis: i64| {
        let opts = TrialOptions { cfo_mode: CfoMode::Oracle, misalignment_samples: mis, ..Default::default() };
        let r = trial(Scheme::Df, topo, 1500, 31, opts);
        compute_per(&r).unwrap()
    };
    let aligned = run(0);
    let sigma = per_sigma(aligned.max(1.0 / 1500.0), 1500);
    for mis in [-1, 1] {
        let p = run(mis);
        assert!((p - aligned).abs() <= 3.0 * 2f64.sqrt() * sigma, "misalignment {mis}: {p} vs {aligned}");
    }
    let late = run(20);
    assert!(late >= 10.0 * aligned.max(1.0 / 1500.0), "20 samples: {late} vs {aligned}");
}

#[test]
fn af_forwards_relay_noise_and_df_regenerates() {
    let params = SystemParams::default();
    let radio = Radio::new(Transmitter::new(params.clone()), Receiver::new(params, ReceiverConfig::default(), noise_floor(40.0)));
    let awgn = FadingModel::new(FadingKind::Awgn, 0.0);
    let [s, r, d] = [300.0, -900.0, 1200.0].map(NodeClock::new);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Relay hears the source at 23 dB and reaches the destination at 40 dB; the direct
    // link is at the emulator's floor.
    let links = Links {
        sd: LinkChannel::new(89.0, awgn, &s, &d, &mut rng).unwrap(),
        sr: LinkChannel::new(70.0, awgn, &s, &r, &mut rng).unwrap(),
        rd: LinkChannel::new(53.0, awgn, &r, &d, &mut rng).unwrap(),
    };
    let mut evm = |scheme| {
        let mut acc = Vec::new();
        for i in 0..40 {
            let f = Frame::new(0, 2, i, (0..600).map(|_| rng.gen()).collect(), ModulationScheme::Qpsk);
            let res = run_exchange(&radio, &ExchangeConfig::new(scheme), &f, &links, &mut rng).unwrap();
            if res.relay_transmitted {
                acc.push(res.dest.evm_db.unwrap());
            }
        }
        assert!(acc.len() >= 38, "{scheme}: relay forwarded {} of 40", acc.len());
        acc.iter().sum::<f64>() / acc.len() as f64
    };
    let af = evm(Scheme::Af);
    let df = evm(Scheme::Df);
    assert!((-26.0..=-20.0).contains(&af), "AF EVM {af:.1} dB should follow the 23 dB relay input");
    assert!(df < af - 8.0, "DF EVM {df:.1} dB vs AF {af:.1} dB");
}

#[test]
fn relay_cfo_errors_widen_at_low_receive_power() {
    let r = trial(Scheme::Df, colocated(0.0, FadingModel::flat()), 3000, 41, TrialOptions::default());
    let mut rec = r.cfo_records.clone();
    assert!(rec.len() > 2900);
    rec.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spread = rec.last().unwrap().0 - rec[0].0;
    assert!(spread > 25.0, "receive power spread {spread:.1} dB");
    let sd = |x: &[(f64, f64)]| {
        let m = x.iter().map(|v| v.1).sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v.1 - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
    };
    let tenth = rec.len() / 10;
    let (weak, strong) = (sd(&rec[..tenth]), sd(&rec[rec.len() - tenth..]));
    assert!(weak > 3.0 * strong, "error spread weak {weak:.2} Hz strong {strong:.2} Hz");
}

#[test]
fn mhop_ber_hides_its_packet_losses() {
    // Relay beside the destination: the source-relay hop is as long as the direct link.
    let topo = make_topology(
        TopologyKind::Linear,
        TopologyParams { relay_position_m: Some(10.4), ..Default::default() },
        FadingModel::flat(),
    )
    .unwrap();
    let nc = trial(Scheme::Nc, topo, 3000, 51, TrialOptions::default());
    let mhop = trial(Scheme::Mhop, topo, 3000, 52, TrialOptions::default());
    let (pn, pm) = (compute_per(&nc).unwrap(), compute_per(&mhop).unwrap());
    let (bn, bm) = (compute_ber(&nc).unwrap(), compute_ber(&mhop).unwrap());
    assert!(bm < 0.1 * bn, "BER MHOP {bm:.2e} NC {bn:.2e}");
    let sigma = (per_sigma(pn, 3000).powi(2) + per_sigma(pm, 3000).powi(2)).sqrt();
    assert!(pm >= pn - 3.0 * sigma, "PER MHOP {pm:.4} NC {pn:.4}");
    assert!(mhop.n_no_rx > 5 * nc.n_no_rx.max(1));
}

#[test]
fn cooperation_survives_small_forced_offsets_only() {
    let cfg = coop_ofdm::config::preset("fig2-cfo-sweep").unwrap();
    let coop_ofdm::harness::PointKind::Trial(base) = cfg.expand().unwrap().remove(0).kind else { panic!() };
    let at = |scheme, offset_hz| {
        let mut s = TrialSpec { scheme, n_packets: 1500, seed: 61, ..base.clone() };
        s.options.cfo_mode = CfoMode::Forced { offset_hz };
        compute_per(&run_trial(&s).unwrap()).unwrap()
    };
    let nc = at(Scheme::Nc, 0.0);
    let df0 = at(Scheme::Df, 0.0);
    let df300 = at(Scheme::Df, 300.0);
    assert!(df0 < 0.5 * nc, "DF {df0} NC {nc}");
    assert!(df300 > 0.95, "DF at 300 Hz {df300}");
}
