//! Brute-force reference implementations, written from the definitions
//! rather than from the library code.

use std::collections::HashMap;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn moment(x: &[f64], k: i32) -> f64 {
    let mu = mean(x);
    mean(&x.iter().map(|v| (v - mu).powi(k)).collect::<Vec<_>>())
}

pub fn var(x: &[f64]) -> f64 {
    if x.is_empty() {
        f64::NAN
    } else if constant(x) {
        0.0
    } else {
        moment(x, 2)
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    // insertion sort
    let mut s: Vec<f64> = Vec::with_capacity(x.len());
    for &v in x {
        let pos = s.iter().position(|&w| w > v).unwrap_or(s.len());
        s.insert(pos, v);
    }
    s
}

pub fn quantile(x: &[f64], q: f64) -> f64 {
    let s = sorted(x);
    let h = (s.len() - 1) as f64 * q;
    let below = h.floor();
    let i = below as usize;
    if i + 1 >= s.len() {
        return s[s.len() - 1];
    }
    s[i] + (h - below) * (s[i + 1] - s[i])
}

fn standardized(x: &[f64], k: i32) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    if constant(x) {
        return 0.0;
    }
    moment(x, k) / moment(x, 2).powf(k as f64 / 2.0)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 || constant(a) || constant(b) {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sa: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let sb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (sa.sqrt() * sb.sqrt())
}

/// Bins 1..=n/2 of the plain DFT, computed term by term.
pub fn dft_one_sided(x: &[f64], fs: f64) -> Vec<(f64, f64)> {
    let n = x.len();
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            (k as f64 * fs / n as f64, (re * re + im * im).sqrt())
        })
        .collect()
}

pub enum Out {
    S(f64),
    V(Vec<f64>),
}

/// Reference result of builtin `name` with vector argument `x` (sampled at
/// `fs`) and scalar arguments `s`.
pub fn builtin(name: &str, x: &[f64], fs: f64, s: &[f64]) -> Option<Out> {
    use Out::{S, V};
    let bins = || dft_one_sided(x, fs);
    let power = || -> Vec<(f64, f64)> { bins().into_iter().map(|(f, m)| (f, m * m)).collect() };
    Some(match name {
        "mean" => S(mean(x)),
        "var" => S(var(x)),
        "std" => S(var(x).sqrt()),
        "min" => S(sorted(x)[0]),
        "max" => S(*sorted(x).last().unwrap()),
        "range" => S(sorted(x).last().unwrap() - sorted(x)[0]),
        "median" => S(quantile(x, 0.5)),
        "quantile" => S(quantile(x, s[0])),
        "skewness" => S(standardized(x, 3)),
        "kurtosis" => S(if constant(x) { 0.0 } else { standardized(x, 4) - 3.0 }),
        "rms" => S((x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()),
        "energy" => S(x.iter().map(|v| v * v).sum()),
        "zero_crossings" => S((1..x.len()).filter(|&i| x[i - 1] * x[i] < 0.0).count() as f64),
        "line_length" => S((1..x.len()).map(|i| (x[i] - x[i - 1]).abs()).sum()),
        "mean_abs_diff" => S((1..x.len()).map(|i| (x[i] - x[i - 1]).abs()).sum::<f64>() / (x.len() - 1) as f64),
        "n_peaks" => S((1..x.len().saturating_sub(1)).filter(|&i| x[i] > x[i - 1] && x[i] > x[i + 1]).count() as f64),
        "length" => S(x.len() as f64),
        "autocorr" => {
            let lag = s[0] as usize;
            S(if lag >= x.len() { 0.0 } else { pearson(&x[..x.len() - lag], &x[lag..]) })
        }
        "sample_rate" => S(fs),
        "diff" => V((1..x.len()).map(|i| x[i] - x[i - 1]).collect()),
        "abs" => V(x.iter().map(|v| v.abs()).collect()),
        "normalize" => {
            if constant(x) {
                V(vec![0.0; x.len()])
            } else {
                let (mu, sd) = (mean(x), var(x).sqrt());
                V(x.iter().map(|v| (v - mu) / sd).collect())
            }
        }
        "resample" => {
            let n = s[0] as usize;
            V((0..n)
                .map(|i| {
                    let t = i as f64 * (x.len() - 1) as f64 / (n - 1) as f64;
                    let j = (t.floor() as usize).min(x.len() - 1);
                    if j + 1 >= x.len() {
                        x[j]
                    } else {
                        x[j] + (t - j as f64) * (x[j + 1] - x[j])
                    }
                })
                .collect())
        }
        "spectral_centroid" => {
            let sp = bins();
            S(sp.iter().map(|(f, m)| f * m).sum::<f64>() / sp.iter().map(|(_, m)| m).sum::<f64>())
        }
        "spectral_spread" => {
            let sp = bins();
            let total: f64 = sp.iter().map(|(_, m)| m).sum();
            let c = sp.iter().map(|(f, m)| f * m).sum::<f64>() / total;
            S((sp.iter().map(|(f, m)| (f - c).powi(2) * m).sum::<f64>() / total).sqrt())
        }
        "peak_frequency" => {
            let sp = bins();
            let top = sp.iter().map(|p| p.1).fold(f64::MIN, f64::max);
            S(sp.iter().find(|p| p.1 == top).unwrap().0)
        }
        "mean_frequency" => {
            let p = power();
            S(p.iter().map(|(f, w)| f * w).sum::<f64>() / p.iter().map(|(_, w)| w).sum::<f64>())
        }
        "spectral_entropy" => {
            let p = power();
            let total: f64 = p.iter().map(|(_, w)| w).sum();
            S(-p.iter().map(|(_, w)| w / total).filter(|q| *q > 0.0).map(|q| q * q.ln()).sum::<f64>())
        }
        "spectral_edge" => {
            let p = power();
            let total: f64 = p.iter().map(|(_, w)| w).sum();
            let mut acc = 0.0;
            let mut edge = p.last().unwrap().0;
            for (f, w) in &p {
                acc += w;
                if acc >= s[1] * total {
                    edge = *f;
                    break;
                }
            }
            S(edge)
        }
        "band_power" => S(power().iter().filter(|(f, _)| s[1] <= *f && *f < s[2]).map(|(_, w)| w).sum()),
        _ => return None,
    })
}

pub fn scalar_builtin(name: &str, v: f64) -> Option<f64> {
    Some(match name {
        "abs" => v.abs(),
        "sqrt" => {
            if v < 0.0 {
                f64::NAN
            } else {
                v.sqrt()
            }
        }
        "log" => {
            if v <= 0.0 {
                f64::NAN
            } else {
                v.ln()
            }
        }
        "exp" => v.exp(),
        _ => return None,
    })
}

/// Hand-Till macro AUROC by direct pair counting.
pub fn auroc_pairs(proba: &[Vec<f64>], y: &[usize], k: usize) -> f64 {
    let a = |i: usize, j: usize| -> f64 {
        let (mut wins, mut n) = (0.0, 0.0);
        for (pa, &ya) in proba.iter().zip(y) {
            for (pb, &yb) in proba.iter().zip(y) {
                if ya == i && yb == j {
                    n += 1.0;
                    if pa[i] > pb[i] {
                        wins += 1.0;
                    } else if pa[i] == pb[i] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / n
    };
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += (a(i, j) + a(j, i)) / 2.0;
            pairs += 1.0;
        }
    }
    sum / pairs
}

/// Mann-Whitney U of `pos` over `neg` from the rank-sum with midranks,
/// scaled to [0, 1].
pub fn mann_whitney(pos: &[f64], neg: &[f64]) -> f64 {
    let all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let rank = |v: f64| -> f64 {
        let below = all.iter().filter(|&&w| w < v).count() as f64;
        let equal = all.iter().filter(|&&w| w == v).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let r: f64 = pos.iter().map(|&v| rank(v)).sum();
    let n1 = pos.len() as f64;
    (r - n1 * (n1 + 1.0) / 2.0) / (n1 * neg.len() as f64)
}

/// Plug-in MI over the joint histogram of equal-frequency bin and label.
pub fn mutual_information(x: &[f64], y: &[usize], bins: usize) -> f64 {
    let n = x.len() as f64;
    let mut edges: Vec<f64> = Vec::new();
    for k in 1..bins {
        let e = quantile(x, k as f64 / bins as f64);
        if edges.last() != Some(&e) {
            edges.push(e);
        }
    }
    let bin = |v: f64| edges.iter().filter(|&&e| e < v).count();
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    let mut py: HashMap<usize, f64> = HashMap::new();
    for (&v, &c) in x.iter().zip(y) {
        let b = bin(v);
        *joint.entry((b, c)).or_default() += 1.0;
        *pb.entry(b).or_default() += 1.0;
        *py.entry(c).or_default() += 1.0;
    }
    let mut keys: Vec<_> = joint.keys().copied().collect();
    keys.sort();
    keys.iter()
        .map(|k| {
            let p = joint[k] / n;
            p * (p / ((pb[&k.0] / n) * (py[&k.1] / n))).ln()
        })
        .sum::<f64>()
        .max(0.0)
}
