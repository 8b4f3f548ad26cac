//! Seeded synthetic datasets with known label structure, used by the
//! acceptance suite, the benches and the demo.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::builtins::{num, spectrum};
use crate::model::{ChannelSeries, Dataset, SignalWindow};

pub const PLANTED_FS: f64 = 64.0;
pub const PLANTED_LEN: usize = 256;

fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn window(id: String, label: &str, channels: Vec<(&str, Vec<f64>)>, fs: f64) -> SignalWindow {
    SignalWindow {
        id,
        label: label.into(),
        channels: channels
            .into_iter()
            .map(|(name, v)| (name.to_string(), ChannelSeries::new(name, fs, v).expect("finite synthetic series")))
            .collect::<BTreeMap<_, _>>(),
    }
}

/// Two channels, three classes. `ch1` is a random walk with skewed
/// increments, time-reversed in half of the windows; `ch2` is a strong
/// 8-20 Hz tone over a weaker 1-4 Hz tone plus noise. Class `a` is a
/// negative increment skew on `ch1`; the rest split into `b`/`c` at the
/// median of `ch2` power in [1, 4) Hz. Neither is visible to per-channel
/// moments or broad spectral summaries.
pub fn planted_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let mut walk = Vec::with_capacity(PLANTED_LEN);
        let mut level = 0.0;
        for _ in 0..PLANTED_LEN {
            level += exp1(&mut rng) - 1.0;
            walk.push(level);
        }
        if rng.random::<bool>() {
            walk.reverse();
        }
        let a = rng.random_range(1.0..2.0);
        let f = rng.random_range(8.0..20.0);
        let b = rng.random_range(0.0..0.6);
        let g = rng.random_range(1.0..4.0);
        let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let tone: Vec<f64> = (0..PLANTED_LEN)
            .map(|k| {
                let t = k as f64 / PLANTED_FS;
                a * (2.0 * PI * f * t + p1).sin() + b * (2.0 * PI * g * t + p2).sin() + 0.1 * normal(&mut rng)
            })
            .collect();
        raw.push((walk, tone));
    }

    let skew: Vec<f64> = raw.iter().map(|(w, _)| num::skewness(&num::diff(w))).collect();
    let low: Vec<f64> = raw.iter().map(|(_, t)| spectrum::band_power(t, PLANTED_FS, 1.0, 4.0)).collect();
    let mut rest: Vec<f64> = (0..n).filter(|&i| skew[i] >= 0.0).map(|i| low[i]).collect();
    rest.sort_by(f64::total_cmp);
    let tau = if rest.is_empty() { 0.0 } else { num::quantile_sorted(&rest, 0.5) };

    let windows = raw
        .into_iter()
        .enumerate()
        .map(|(i, (walk, tone))| {
            let label = if skew[i] < 0.0 {
                "a"
            } else if low[i] < tau {
                "b"
            } else {
                "c"
            };
            window(format!("w{i:04}"), label, vec![("ch1", walk), ("ch2", tone)], PLANTED_FS)
        })
        .collect();
    Dataset::new(windows).expect("well-formed synthetic dataset")
}

pub const PLANTED_FEATURES: &str = r#"[
 {"name": "ch1_diff_skewness", "description": "skewness of first differences of ch1", "rationale": "asymmetric rises versus falls", "channels": ["ch1"]},
 {"name": "ch2_low_band_power", "description": "ch2 power between 1 and 4 Hz", "rationale": "slow oscillatory component", "channels": ["ch2"]}
]"#;

pub const PLANTED_PROGRAM: &str = "```featurescript
fn ch1_diff_skewness(ch1) -> scalar { skewness(diff(ch1)) }
fn ch2_low_band_power(ch2) -> scalar { band_power(ch2, sample_rate(ch2), 1, 4) }
```";

/// Replay responses for a run without a knowledge base: every call
/// proposes nothing except in iteration `reveal_at`, where the direct
/// call proposes the two planted features.
pub fn planted_replay(iterations: usize, reveal_at: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..iterations {
        if i == reveal_at {
            out.push(PLANTED_FEATURES.to_string());
            out.push("[]".into());
            out.push(PLANTED_PROGRAM.to_string());
        } else {
            out.push("[]".into());
            out.push("[]".into());
        }
    }
    out
}
