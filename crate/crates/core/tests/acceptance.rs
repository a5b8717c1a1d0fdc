//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset.

use std::f64::consts::PI;
use std::time::Instant;

use lorawan_capture::airtime::{time_on_air, RadioParams};
use lorawan_capture::config::NetworkConfig;
use lorawan_capture::geometry::{CaptureRow, CoChannelRejection};
use lorawan_capture::model::{capacity, evaluate, p_recollide};
use lorawan_capture::quadrature::{Integrator, QuadratureSpec};
use lorawan_capture::sim::{self, SimConfig, SimReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CRS: [CoChannelRejection; 5] = [
    CoChannelRejection::Db(0.0),
    CoChannelRejection::Db(3.0),
    CoChannelRejection::Db(6.0),
    CoChannelRejection::Db(10.0),
    CoChannelRejection::Infinite,
];
const MC_SAMPLES: usize = 1_000_000;
const SEEDS: u64 = 10;
const SIM_DURATION_S: f64 = 1e5;
const SIM_WARMUP_S: f64 = 500.0;
const TOLERANCE: f64 = 0.03;

type Check = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn network(n: usize, cr: CoChannelRejection) -> NetworkConfig {
    NetworkConfig::eu_default(n, 3, cr).unwrap()
}

/// The default sweep: 20 log-spaced loads over [1e-3, 2 capacity].
fn load_grid(net: &NetworkConfig) -> Vec<f64> {
    let hi = 2.0 * capacity(net);
    (0..20)
        .map(|j| 1e-3 * (hi / 1e-3).powf(j as f64 / 19.0))
        .collect()
}

/// Uniform point on the ring area `[mu, nu]`.
fn ring_point(rng: &mut ChaCha8Rng, mu: f64, nu: f64) -> (f64, f64) {
    let r = (mu * mu + (nu * nu - mu * mu) * rng.random::<f64>()).sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    (r * a.cos(), r * a.sin())
}

fn within_3_sigma(est: f64, exact: f64, n: usize) -> (bool, f64) {
    let se = (est * (1.0 - est) / n as f64).sqrt().max(1.0 / n as f64);
    let z = (est - exact).abs() / se;
    (z <= 3.0, z)
}

fn gw_capture_identities() -> Outcome {
    let mut worst_sum = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut failures = Vec::new();
    for (ci, &cr) in CRS.iter().enumerate() {
        let net = network(1000, cr);
        let slope = net.propagation.slope_b_db;
        for (ring, (band, row)) in net.plan.bands.iter().zip(&net.capture.rows).enumerate() {
            let sum = row.w_gw_pair + row.w_both + row.w_one;
            worst_sum = worst_sum.max((sum - 1.0).abs());
            if cr == CoChannelRejection::Db(0.0)
                && (row.w_gw_pair, row.w_both, row.w_one) != (0.5, 0.0, 0.5)
            {
                failures.push(format!("ring {ring} CR=0 gives {row:?}"));
            }
            // Gateway power ordering only depends on distances: the tagged
            // mote wins by CR dB iff the interferer is 10^(CR/B) times farther.
            let x = match cr {
                CoChannelRejection::Db(d) => 10f64.powf(d / slope),
                CoChannelRejection::Infinite => f64::INFINITY,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + (ci * 10 + ring) as u64);
            let (mut tagged, mut interferer) = (0usize, 0usize);
            for _ in 0..MC_SAMPLES {
                let (a, b) = (
                    ring_point(&mut rng, band.inner_radius_m, band.outer_radius_m),
                    ring_point(&mut rng, band.inner_radius_m, band.outer_radius_m),
                );
                let (r0, r1) = (a.0.hypot(a.1), b.0.hypot(b.1));
                if r1 > r0 * x {
                    tagged += 1;
                } else if r0 > r1 * x {
                    interferer += 1;
                }
            }
            let n = MC_SAMPLES as f64;
            let est = [
                tagged as f64 / n,
                (MC_SAMPLES - tagged - interferer) as f64 / n,
                interferer as f64 / n,
            ];
            let exact = [row.w_gw_pair, row.w_both, row.w_one];
            for (name, (e, w)) in ["W_gw", "W_both", "W_one"]
                .iter()
                .zip(est.iter().zip(exact))
            {
                let (ok, z) = within_3_sigma(*e, w, MC_SAMPLES);
                worst_z = worst_z.max(z);
                if !ok {
                    failures.push(format!(
                        "ring {ring} {cr} {name}: closed {w:.6} vs MC {e:.6} ({z:.2} sigma)"
                    ));
                }
            }
        }
    }
    if worst_sum > 1e-9 {
        failures.push(format!("sum off by {worst_sum:e}"));
    }
    outcome(
        failures.is_empty(),
        format!(
            "max |sum-1| {worst_sum:.1e}, worst MC deviation {worst_z:.2} sigma {}",
            failures.join("; ")
        ),
    )
}

fn mote_capture_vs_monte_carlo() -> Outcome {
    let mut worst_z = 0.0f64;
    let mut failures = Vec::new();
    for (ci, &cr) in CRS.iter().enumerate() {
        let net = network(1000, cr);
        let p = &net.propagation;
        let x = match cr {
            CoChannelRejection::Db(d) => {
                10f64.powf((d + p.tx_power_mote_dbm - p.tx_power_gw_dbm) / p.slope_b_db)
            }
            CoChannelRejection::Infinite => f64::INFINITY,
        };
        for (ring, (band, row)) in net.plan.bands.iter().zip(&net.capture.rows).enumerate() {
            if cr.is_infinite() {
                if row.w_mote_pair != 0.0 {
                    failures.push(format!("ring {ring} CR=inf gives {}", row.w_mote_pair));
                }
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + (ci * 10 + ring) as u64);
            let mut hits = 0usize;
            for _ in 0..MC_SAMPLES {
                let a = ring_point(&mut rng, band.inner_radius_m, band.outer_radius_m);
                let b = ring_point(&mut rng, band.inner_radius_m, band.outer_radius_m);
                // ACK from the gateway at |a| against the mote at b
                if (a.0 - b.0).hypot(a.1 - b.1) > x * a.0.hypot(a.1) {
                    hits += 1;
                }
            }
            let est = hits as f64 / MC_SAMPLES as f64;
            let (ok, z) = within_3_sigma(est, row.w_mote_pair, MC_SAMPLES);
            worst_z = worst_z.max(z);
            if !ok {
                failures.push(format!(
                    "ring {ring} {cr}: quadrature {:.6} vs MC {est:.6} ({z:.2} sigma)",
                    row.w_mote_pair
                ));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("worst deviation {worst_z:.2} sigma {}", failures.join("; ")),
    )
}

fn airtime_anchor() -> Outcome {
    let t = time_on_air(&RadioParams::eu868(12), 51).unwrap();
    outcome(
        (t - 2.4).abs() <= 0.15,
        format!("SF12 51-byte frame {t:.6} s"),
    )
}

/// PER of the model with every capture term removed by hand.
fn no_capture_per(net: &NetworkConfig, lambda: f64) -> f64 {
    let f = net.num_channels as f64;
    let t_ack0 = net.plan.bands[0].airtime.ack_s;
    let quad = Integrator::new(QuadratureSpec {
        tolerance: 1e-11,
        ..net.quadrature
    })
    .unwrap();
    let p_data: Vec<f64> = net
        .plan
        .bands
        .iter()
        .map(|b| {
            let r = lambda * b.usage_prob / f;
            let mut p = 1.0f64;
            for _ in 0..10_000 {
                let next = (-(2.0 * b.airtime.data_frame_s + p * b.airtime.ack_s) * r).exp();
                if (next - p).abs() < 1e-15 {
                    p = next;
                    break;
                }
                p = next;
            }
            p
        })
        .collect();
    let decoded: f64 = net
        .plan
        .bands
        .iter()
        .zip(&p_data)
        .map(|(b, p)| b.usage_prob * p)
        .sum();
    let mut ps = 0.0;
    for (i, b) in net.plan.bands.iter().enumerate() {
        let r = lambda * b.usage_prob / f;
        let (td, ta) = (b.airtime.data_frame_s, b.airtime.ack_s);
        let a1 = (-(net.ack_delay_1_s.min(td) + ta) * r).exp();
        let a2 = (-t_ack0 * lambda * (1.0 - b.usage_prob * p_data[i] / f) * decoded).exp();
        let ack = a1 + a2 - a1 * a2;
        let ps1 = p_data[i] * ack;
        let pc = p_recollide(
            r,
            net.num_channels,
            &b.airtime,
            net.ack_delay_1_s,
            net.retry_window_s,
            &quad,
        )
        .unwrap();
        let ps_re = (1.0 - pc) * p_data[i] * ack;
        let a = lambda / net.num_motes as f64;
        let w = net.retry_window_s;
        let pg = if a == 0.0 {
            1.0
        } else {
            (-a * (td + net.ack_delay_2_s + t_ack0 + 1.0)).exp() * (1.0 - (-a * w).exp()) / (a * w)
        };
        let q = (1.0 - ps_re) * pg;
        let series: f64 = (0..=net.retry_limit).map(|k| q.powi(k as i32)).sum();
        let p1 = 1.0 / (1.0 + (1.0 - ps1) * pg * series);
        ps += b.usage_prob * (p1 * ps1 + (1.0 - p1) * ps_re);
    }
    1.0 - ps
}

fn no_capture_reduction() -> Outcome {
    let net = network(1000, CoChannelRejection::Infinite);
    let all_off = net
        .capture
        .rows
        .iter()
        .all(|r| *r == CaptureRow::NO_CAPTURE);
    let mut worst = 0.0f64;
    for l in load_grid(&net) {
        let full = evaluate(&net.with_load(l)).unwrap().per;
        worst = worst.max((full - no_capture_per(&net, l)).abs());
    }
    outcome(
        all_off && worst <= 1e-9,
        format!(
            "max |PER_full - PER_aloha| {worst:.2e} over 20 loads, capture rows zeroed: {all_off}"
        ),
    )
}

struct SimPoint {
    mean: f64,
    ci95: f64,
    conserved: bool,
}

fn simulate(net: &NetworkConfig, lambda: f64) -> SimPoint {
    let reports: Vec<SimReport> = (1..=SEEDS)
        .map(|seed| {
            let cfg = SimConfig {
                warmup_s: SIM_WARMUP_S,
                ..SimConfig::new(net.with_load(lambda), SIM_DURATION_S, seed)
            };
            sim::run(&cfg).unwrap()
        })
        .collect();
    let mean = reports.iter().map(|r| r.per_estimate).sum::<f64>() / reports.len() as f64;
    let batches: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.batch_per.iter().copied())
        .collect();
    let b = batches.len() as f64;
    let bm = batches.iter().sum::<f64>() / b;
    let sd = (batches.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
    SimPoint {
        mean,
        ci95: 1.96 * sd / b.sqrt(),
        conserved: reports.iter().all(|r| r.is_conserved()),
    }
}

fn cross_validation() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut worst = (0.0f64, String::new());
    let mut conserved = true;
    for n in [100, 1000] {
        for cr in [CoChannelRejection::Infinite, CoChannelRejection::Db(0.0)] {
            let net = network(n, cr);
            let cap = capacity(&net);
            for l in load_grid(&net).into_iter().filter(|&l| l <= cap) {
                let model = evaluate(&net.with_load(l)).unwrap().per;
                let s = simulate(&net, l);
                conserved &= s.conserved;
                let allowed = TOLERANCE.max(2.0 * s.ci95);
                let gap = (model - s.mean).abs();
                checked += 1;
                let label = format!(
                    "N={n} CR={cr} lambda={l:.4} ({:.2} cap): model {model:.4} sim {:.4}+-{:.4}",
                    l / cap,
                    s.mean,
                    s.ci95
                );
                if gap / allowed > worst.0 {
                    worst = (gap / allowed, label.clone());
                }
                if gap > allowed {
                    failures.push(label);
                }
            }
        }
    }
    let detail = format!(
        "{}/{checked} points within max({TOLERANCE}, 2 CI95); worst {}{}",
        checked - failures.len(),
        worst.1,
        if failures.is_empty() {
            String::new()
        } else {
            format!("; out of tolerance: {}", failures.join("; "))
        }
    );
    outcome(failures.is_empty() && conserved, detail)
}

fn capture_benefit() -> Outcome {
    let inf = network(1000, CoChannelRejection::Infinite);
    let zero = network(1000, CoChannelRejection::Db(0.0));
    let per = |n: &NetworkConfig, l: f64| evaluate(&n.with_load(l)).unwrap().per;
    let (mut lo, mut hi) = (1e-3, 2.0 * capacity(&inf));
    if per(&inf, hi) < 0.2 {
        hi *= 4.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if per(&inf, mid) < 0.2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let at = 0.5 * (lo + hi);
    let reduction = 1.0 - per(&zero, at) / per(&inf, at);
    let best = load_grid(&inf)
        .into_iter()
        .map(|l| 1.0 - per(&zero, l) / per(&inf, l))
        .fold(0.0f64, f64::max);
    outcome(
        reduction >= 0.25 && best >= 0.35,
        format!(
            "at lambda {at:.4} (CR=inf PER 0.2) CR=0 is {:.1}% lower; best over grid {:.1}%",
            100.0 * reduction,
            100.0 * best
        ),
    )
}

fn capacity_edge() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for cr in [CoChannelRejection::Infinite, CoChannelRejection::Db(0.0)] {
        let net = network(1000, cr);
        let l = 1.5 * capacity(&net);
        let model = evaluate(&net.with_load(l)).unwrap().per;
        let s = simulate(&net, l);
        let allowed = TOLERANCE.max(2.0 * s.ci95);
        let gap = (model - s.mean).abs();
        pass &= gap > allowed && s.conserved;
        parts.push(format!("CR={cr}: gap {gap:.4} vs tolerance {allowed:.4}"));
    }
    outcome(pass, format!("at 1.5 capacity {}", parts.join(", ")))
}

fn properties() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_residual = 0.0f64;
    let grid = load_grid(&network(1000, CoChannelRejection::Infinite));
    let mut curves = Vec::new();
    for &cr in &CRS {
        let net = network(1000, cr);
        let mut curve = Vec::new();
        for &l in &grid {
            let rep = evaluate(&net.with_load(l)).unwrap();
            for o in &rep.rates {
                worst_residual = worst_residual.max(o.p_data_residual);
            }
            curve.push(rep.per);
        }
        if curve.windows(2).any(|w| w[1] < w[0]) {
            failures.push(format!("PER not monotone in load for CR={cr}"));
        }
        curves.push(curve);
    }
    if worst_residual >= 1e-10 {
        failures.push(format!("fixed-point residual {worst_residual:e}"));
    }
    if curves[0].iter().zip(&curves[4]).any(|(a, b)| a > b) {
        failures.push("PER(CR=0) above PER(CR=inf)".into());
    }

    let net = network(1000, CoChannelRejection::Db(0.0));
    let cap = capacity(&net);
    let mut runs = 0;
    for (k, frac) in [0.0, 0.1, 0.5, 1.0, 1.5].into_iter().enumerate() {
        for cr in [CoChannelRejection::Infinite, CoChannelRejection::Db(3.0)] {
            let cfg = SimConfig::new(network(1000, cr).with_load(frac * cap), 2e4, 100 + k as u64);
            let a = sim::run(&cfg).unwrap();
            let b = sim::run(&cfg).unwrap();
            runs += 1;
            if format!("{a:?}") != format!("{b:?}") {
                failures.push(format!("rerun differs at {frac} cap"));
            }
            if !a.is_conserved() {
                failures.push(format!("conservation broken at {frac} cap: {a:?}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "residual max {worst_residual:.1e} on 20x5 grid, {runs} simulator runs repeated {}",
            failures.join("; ")
        ),
    )
}

fn recollision_oracle() -> Outcome {
    let net = network(1000, CoChannelRejection::Db(0.0));
    let band = &net.plan.bands[0];
    let (td, ta) = (band.airtime.data_frame_s, band.airtime.ack_s);
    let (t1, w, f) = (net.ack_delay_1_s, net.retry_window_s, net.num_channels);
    let quad = Integrator::new(QuadratureSpec::default()).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, frac) in [0.5, 1.0].into_iter().enumerate() {
        let r = frac * capacity(&net) * band.usage_prob / f as f64;
        let analytic = p_recollide(r, f, &band.airtime, t1, w, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + k as u64);
        let tail = 1.0 - (-r * td).exp();
        let mut hits = 0usize;
        for _ in 0..MC_SAMPLES {
            // offset of the two colliding frames, then both random delays
            let mag = -(1.0 - rng.random::<f64>() * tail).ln() / r;
            let x = if rng.random::<bool>() { mag } else { -mag };
            let y = w * rng.random::<f64>();
            let z = x + w * rng.random::<f64>();
            let same_channel = rng.random_range(0..f) == rng.random_range(0..f);
            let hit = (y <= z && z <= y + td)
                || (y + td + t1 <= z && z <= y + td + t1 + ta)
                || (z <= y && y <= z + td)
                || (z + td + t1 <= y && y <= z + td + t1 + ta);
            if same_channel && hit {
                hits += 1;
            }
        }
        let est = hits as f64 / MC_SAMPLES as f64;
        let (ok, z) = within_3_sigma(est, analytic, MC_SAMPLES);
        pass &= ok;
        parts.push(format!(
            "r={r:.4}: analytic {analytic:.6} MC {est:.6} ({z:.2} sigma)"
        ));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    let criteria: [Check; 9] = [
        (1, "gateway capture identities", gw_capture_identities),
        (2, "mote capture quadrature", mote_capture_vs_monte_carlo),
        (3, "airtime anchor", airtime_anchor),
        (4, "no-capture reduction", no_capture_reduction),
        (5, "model vs simulation", cross_validation),
        (6, "capture benefit", capture_benefit),
        (7, "capacity edge", capacity_edge),
        (8, "property suites", properties),
        (9, "re-collision oracle", recollision_oracle),
    ];
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id} {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail.trim_end()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
