//! Fast invariant suite behind `coopsim selftest`.

use crate::channel::{apply_cfo, FadingModel, NodeClock};
use crate::harness::estimation::coarse_cfo_experiment;
use crate::harness::trial::stream_rng;
use crate::harness::{compute_per, make_topology, run_trial, TopologyKind, TopologyParams, TrialOptions, TrialSpec};
use crate::harness::metrics::error_events;
use crate::nodes::{Receiver, ReceiverConfig, Scheme};
use crate::phy::modulation::{demap_symbols, map_bits_scaled};
use crate::phy::{Baseband, Frame, FrameHeader, ModulationScheme, OfdmEngine, SubcarrierGrid, SystemParams, Transmitter};
use crate::phy::params::used_subcarriers;
use crate::stbc::{combine_pair, encode_pair, StbcRole};
use num_complex::Complex64;
use rand::Rng;

/// Knobs that deliberately break the code under test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultInjection {
    /// Gain applied to every constellation point before demapping.
    pub constellation_scale: f64,
}

impl Default for FaultInjection {
    fn default() -> Self {
        Self { constellation_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn log(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("{} checks, {failed} failed\n", self.checks.len()));
        s
    }
}

type Check = fn(&FaultInjection) -> Result<String, String>;

const SEED: u64 = 0x5e1f_7e57;

pub fn run_selftest(fault: &FaultInjection) -> SelftestReport {
    let checks: [(&'static str, Check); 8] = [
        ("demap-round-trip", demap_round_trip),
        ("ofdm-round-trip", ofdm_round_trip),
        ("alamouti-round-trip", alamouti_round_trip),
        ("header-round-trip", header_round_trip),
        ("cfo-identities", cfo_identities),
        ("coarse-cfo-bias", coarse_cfo_bias),
        ("clean-link-decode", clean_link_decode),
        ("trial-accounting", trial_accounting),
    ];
    SelftestReport {
        checks: checks
            .iter()
            .map(|(name, f)| {
                let r = f(fault);
                CheckResult { name, passed: r.is_ok(), detail: r.unwrap_or_else(|e| e) }
            })
            .collect(),
    }
}

fn demap_round_trip(fault: &FaultInjection) -> Result<String, String> {
    let mut rng = stream_rng(SEED, 0);
    let mut total = 0usize;
    for scheme in ModulationScheme::ALL {
        let bits: Vec<u8> = (0..scheme.bits_per_symbol() * 4096).map(|_| rng.gen_range(0..2)).collect();
        let (syms, _) = map_bits_scaled(&bits, scheme, fault.constellation_scale);
        let back = demap_symbols(&syms, scheme);
        let errors = back.iter().zip(&bits).filter(|(a, b)| a != b).count();
        if errors > 0 {
            return Err(format!("{scheme}: {errors} of {} bits differ", bits.len()));
        }
        total += bits.len();
    }
    Ok(format!("{total} bits, 0 errors"))
}

fn ofdm_round_trip(_: &FaultInjection) -> Result<String, String> {
    let e = OfdmEngine::new();
    let mut rng = stream_rng(SEED, 1);
    let mut g = SubcarrierGrid::zeros(8);
    for m in 0..8 {
        for k in used_subcarriers() {
            g.set(m, k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        }
    }
    let bb = e.ofdm_modulate(&g, 10e6);
    let back = e.ofdm_demodulate(&bb.samples, 8).map_err(|e| e.to_string())?;
    let worst = g.symbols.iter().flatten().zip(back.symbols.iter().flatten()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if worst < 1e-10 {
        Ok(format!("max error {worst:.1e}"))
    } else {
        Err(format!("max error {worst:.3e}"))
    }
}

fn alamouti_round_trip(_: &FaultInjection) -> Result<String, String> {
    let mut rng = stream_rng(SEED, 2);
    let mut c = || Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (ha, hb, s1, s2) = (c(), c(), c(), c());
        let (a1, a2) = encode_pair(s1, s2, StbcRole::RoleA);
        let (b1, b2) = encode_pair(s1, s2, StbcRole::RoleB);
        let (r1, r2) = combine_pair(ha * a1 + hb * b1, ha * a2 + hb * b2, ha, hb).map_err(|e| e.to_string())?;
        worst = worst.max((r1 - s1).norm()).max((r2 - s2).norm());
    }
    if worst < 1e-9 {
        Ok(format!("10000 pairs, max error {worst:.1e}"))
    } else {
        Err(format!("max error {worst:.3e}"))
    }
}

fn header_round_trip(_: &FaultInjection) -> Result<String, String> {
    let f = Frame::new(3, 7, 0x1234, vec![0xa5; 100], ModulationScheme::Qam16);
    let bytes = f.header.serialize();
    let parsed = FrameHeader::parse(&bytes).map_err(|e| e.to_string())?;
    if parsed != f.header {
        return Err("parsed header differs".into());
    }
    for bit in 0..bytes.len() * 8 {
        let mut b = bytes;
        b[bit / 8] ^= 1 << (bit % 8);
        if FrameHeader::parse(&b).is_ok() {
            return Err(format!("flip of bit {bit} not detected"));
        }
    }
    Ok(format!("{} single-bit flips detected", bytes.len() * 8))
}

fn cfo_identities(_: &FaultInjection) -> Result<String, String> {
    let mut rng = stream_rng(SEED, 3);
    let x = Baseband::new((0..4000).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(), 10e6);
    let (a, p) = apply_cfo(&x, 700.0, 0.0);
    let (ab, _) = apply_cfo(&a, -300.0, 0.0);
    let (direct, _) = apply_cfo(&x, 400.0, 0.0);
    let (back, _) = apply_cfo(&a, -700.0, 0.0);
    let worst = ab.samples.iter().zip(&direct.samples).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    let inv = back.samples.iter().zip(&x.samples).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    let (s, r, d) = (NodeClock::new(120.0), NodeClock::new(-800.0), NodeClock::new(50.0));
    let chain = s.cfo_to(&r) + r.cfo_to(&d) - s.cfo_to(&d);
    let want_phase = std::f64::consts::TAU * 700.0 * 4000.0 / 10e6;
    let phase_ok = ((p - want_phase).rem_euclid(std::f64::consts::TAU)).min((want_phase - p).rem_euclid(std::f64::consts::TAU)) < 1e-9;
    if worst < 1e-9 && inv < 1e-9 && chain.abs() < 1e-9 && phase_ok {
        Ok(format!("compose {worst:.1e}, inverse {inv:.1e}"))
    } else {
        Err(format!("compose {worst:.3e}, inverse {inv:.3e}, clock chain {chain:.3e}, phase ok {phase_ok}"))
    }
}

fn coarse_cfo_bias(_: &FaultInjection) -> Result<String, String> {
    let p = coarse_cfo_experiment(30.0, 305.0, 2000, SEED);
    let bias = p.bias_hz();
    if bias.abs() < 10.0 {
        Ok(format!("bias {bias:.2} Hz, 2 sigma {:.1} Hz at 30 dB", p.stats.two_sigma))
    } else {
        Err(format!("bias {bias:.2} Hz at 30 dB"))
    }
}

fn clean_link_decode(_: &FaultInjection) -> Result<String, String> {
    let params = SystemParams::default();
    let tx = Transmitter::new(params.clone());
    let nf = 1e-4;
    let rx = Receiver::new(params, ReceiverConfig::default(), nf);
    let mut rng = stream_rng(SEED, 4);
    for m in ModulationScheme::ALL {
        let payload: Vec<u8> = (0..300).map(|_| rng.gen()).collect();
        let f = Frame::new(0, 2, 1, payload, m);
        let wf = tx.build_frame_waveform(&f, StbcRole::RoleB).map_err(|e| e.to_string())?;
        let mut r = vec![Complex64::new(0.0, 0.0); 200];
        r.extend_from_slice(&wf.samples);
        r.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), 100));
        let (mut rb, _) = apply_cfo(&Baseband::new(r, 10e6), 900.0, 0.3);
        crate::channel::add_awgn(&mut rb.samples, nf, &mut rng);
        let rec = rx.receive(&rb.samples, Some(&f));
        if !rec.outcome.is_good() {
            return Err(format!("{m}: {}", rec.outcome.label()));
        }
    }
    Ok("BPSK, QPSK, QAM16 decoded at 40 dB with 900 Hz offset".into())
}

fn trial_accounting(_: &FaultInjection) -> Result<String, String> {
    let topo = make_topology(
        TopologyKind::Colocated,
        TopologyParams { attenuation_db: Some(28.0), ..Default::default() },
        FadingModel::flat(),
    )
    .map_err(|e| e.to_string())?;
    for scheme in [Scheme::Nc, Scheme::Df] {
        let spec = TrialSpec {
            scheme,
            topology: topo,
            modulation: ModulationScheme::Qpsk,
            n_packets: 60,
            seed: SEED,
            options: TrialOptions { payload_len: 200, ..TrialOptions::default() },
        };
        let r = run_trial(&spec).map_err(|e| e.to_string())?;
        if r.n_good + r.n_no_rx + r.n_bad_hdr + r.n_bad_payload != r.n_tx || r.n_tx != 60 {
            return Err(format!("{scheme}: counts do not partition n_tx"));
        }
        let per = compute_per(&r).map_err(|e| e.to_string())?;
        let ev = error_events(&r).map_err(|e| e.to_string())?;
        if (per - ev.total()).abs() > 1e-12 {
            return Err(format!("{scheme}: PER {per} differs from event sum {}", ev.total()));
        }
        let scored = (r.n_tx - r.n_no_rx - r.n_bad_hdr) * (200 + 4) * 8;
        if r.b_total != scored {
            return Err(format!("{scheme}: b_total {} expected {scored}", r.b_total));
        }
    }
    Ok("NC and DF counts partition, PER decomposes".into())
}
