//! The closed builtin catalog. Every entry is total over finite input:
//! degenerate cases come back as NaN (or the documented fallback) rather
//! than panicking.

use std::borrow::Cow;
use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::ast::Kind;

/// Runtime value. Vectors remember the sample rate of the channel they
/// were derived from so spectral builtins can recover it.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<'a> {
    Scalar(f64),
    Vector { values: Cow<'a, [f64]>, fs: f64 },
}

impl Value<'_> {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Scalar(_) => Kind::Scalar,
            Value::Vector { .. } => Kind::Vector,
        }
    }

    pub fn scalar(&self) -> f64 {
        match self {
            Value::Scalar(v) => *v,
            Value::Vector { .. } => panic!("kind checked: expected scalar"),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Value::Vector { values, .. } => values,
            Value::Scalar(_) => panic!("kind checked: expected vector"),
        }
    }

    pub fn fs(&self) -> f64 {
        match self {
            Value::Vector { fs, .. } => *fs,
            Value::Scalar(_) => f64::NAN,
        }
    }
}

fn vector(values: Vec<f64>, fs: f64) -> Value<'static> {
    Value::Vector {
        values: Cow::Owned(values),
        fs,
    }
}

type EvalFn = for<'a> fn(&[Value<'a>]) -> Value<'static>;
/// Check-time validation of arguments whose value is known statically.
type ArgCheck = fn(&[Option<f64>]) -> Result<(), String>;

pub struct Builtin {
    pub name: &'static str,
    pub params: &'static [Kind],
    pub ret: Kind,
    pub summary: &'static str,
    pub(crate) eval: EvalFn,
    pub(crate) arg_check: Option<ArgCheck>,
}

impl Builtin {
    pub fn signature(&self) -> String {
        let params: Vec<String> = self.params.iter().map(ToString::to_string).collect();
        format!("{}({}) -> {}", self.name, params.join(", "), self.ret)
    }

    pub fn call(&self, args: &[Value<'_>]) -> Value<'static> {
        (self.eval)(args)
    }
}

impl std::fmt::Debug for Builtin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.signature())
    }
}

use Kind::{Scalar as S, Vector as V};

macro_rules! stat {
    ($name:literal, $f:path, $doc:literal) => {
        Builtin {
            name: $name,
            params: &[V],
            ret: S,
            summary: $doc,
            eval: |a| Value::Scalar($f(a[0].values())),
            arg_check: None,
        }
    };
}

macro_rules! spectral {
    ($name:literal, $f:path, $doc:literal) => {
        Builtin {
            name: $name,
            params: &[V, S],
            ret: S,
            summary: $doc,
            eval: |a| Value::Scalar($f(a[0].values(), a[1].scalar())),
            arg_check: Some(check_fs),
        }
    };
}

pub static CATALOG: &[Builtin] = &[
    stat!("mean", num::mean, "arithmetic mean"),
    stat!("std", num::std, "population standard deviation"),
    stat!("var", num::var, "population variance"),
    stat!("min", num::min, "minimum"),
    stat!("max", num::max, "maximum"),
    stat!("range", num::range, "max - min"),
    stat!("median", num::median, "median (linear interpolation)"),
    stat!("skewness", num::skewness, "population skewness m3/m2^1.5, 0 for constant input"),
    stat!("kurtosis", num::kurtosis, "population excess kurtosis m4/m2^2 - 3, 0 for constant input"),
    stat!("rms", num::rms, "root mean square"),
    stat!("energy", num::energy, "sum of squares"),
    stat!("zero_crossings", num::zero_crossings, "count of strict sign changes; zeros break a run"),
    stat!("mean_abs_diff", num::mean_abs_diff, "mean absolute first difference"),
    stat!("line_length", num::line_length, "sum of absolute first differences"),
    stat!("n_peaks", num::n_peaks, "count of strict local maxima"),
    stat!("length", num::length, "number of samples"),
    Builtin {
        name: "quantile",
        params: &[V, S],
        ret: S,
        summary: "quantile(x, q), q in [0, 1], linear interpolation",
        eval: |a| Value::Scalar(num::quantile(a[0].values(), a[1].scalar())),
        arg_check: Some(|c| match c[1] {
            Some(q) if !(0.0..=1.0).contains(&q) => Err(format!("quantile level {q} outside [0, 1]")),
            _ => Ok(()),
        }),
    },
    Builtin {
        name: "autocorr",
        params: &[V, S],
        ret: S,
        summary: "autocorr(x, lag): Pearson correlation of x[..n-lag] and x[lag..], 0 if undefined",
        eval: |a| Value::Scalar(num::autocorr(a[0].values(), a[1].scalar())),
        arg_check: Some(|c| match c[1] {
            Some(lag) if !(lag >= 1.0 && lag.fract() == 0.0) => Err(format!("lag {lag} must be a positive integer")),
            _ => Ok(()),
        }),
    },
    Builtin {
        name: "sample_rate",
        params: &[V],
        ret: S,
        summary: "sampling rate in Hz of the channel a vector was derived from",
        eval: |a| Value::Scalar(a[0].fs()),
        arg_check: None,
    },
    Builtin {
        name: "diff",
        params: &[V],
        ret: V,
        summary: "first difference, length n - 1",
        eval: |a| vector(num::diff(a[0].values()), a[0].fs()),
        arg_check: None,
    },
    Builtin {
        name: "abs",
        params: &[V],
        ret: V,
        summary: "elementwise absolute value",
        eval: |a| vector(a[0].values().iter().map(|v| v.abs()).collect(), a[0].fs()),
        arg_check: None,
    },
    Builtin {
        name: "abs",
        params: &[S],
        ret: S,
        summary: "absolute value",
        eval: |a| Value::Scalar(a[0].scalar().abs()),
        arg_check: None,
    },
    Builtin {
        name: "normalize",
        params: &[V],
        ret: V,
        summary: "z-score with population std; zeros for constant input",
        eval: |a| vector(num::normalize(a[0].values()), a[0].fs()),
        arg_check: None,
    },
    Builtin {
        name: "resample",
        params: &[V, S],
        ret: V,
        summary: "resample(x, n): linear interpolation onto n evenly spaced points",
        eval: |a| {
            let x = a[0].values();
            let n = a[1].scalar();
            let out = num::resample(x, n);
            let fs = if out.len() > 1 && x.len() > 1 {
                a[0].fs() * (out.len() - 1) as f64 / (x.len() - 1) as f64
            } else {
                a[0].fs()
            };
            vector(out, fs)
        },
        arg_check: Some(|c| match c[1] {
            Some(n) if !(n >= 2.0 && n.fract() == 0.0 && n <= 1e6) => {
                Err(format!("resample length {n} must be an integer in [2, 1e6]"))
            }
            _ => Ok(()),
        }),
    },
    Builtin {
        name: "sqrt",
        params: &[S],
        ret: S,
        summary: "square root, NaN for negative input",
        eval: |a| Value::Scalar(a[0].scalar().sqrt()),
        arg_check: None,
    },
    Builtin {
        name: "log",
        params: &[S],
        ret: S,
        summary: "natural logarithm, NaN for non-positive input",
        eval: |a| {
            let x = a[0].scalar();
            Value::Scalar(if x > 0.0 { x.ln() } else { f64::NAN })
        },
        arg_check: None,
    },
    Builtin {
        name: "exp",
        params: &[S],
        ret: S,
        summary: "exponential",
        eval: |a| Value::Scalar(a[0].scalar().exp()),
        arg_check: None,
    },
    spectral!("spectral_centroid", spectrum::centroid, "magnitude-weighted mean frequency (DC excluded)"),
    spectral!("spectral_spread", spectrum::spread, "magnitude-weighted frequency standard deviation around the centroid"),
    spectral!("peak_frequency", spectrum::peak_frequency, "frequency of the largest-magnitude non-DC bin, lowest on ties"),
    spectral!("mean_frequency", spectrum::mean_frequency, "power-weighted mean frequency (DC excluded)"),
    spectral!("spectral_entropy", spectrum::entropy, "Shannon entropy (nats) of the normalized non-DC power spectrum"),
    Builtin {
        name: "spectral_edge",
        params: &[V, S, S],
        ret: S,
        summary: "spectral_edge(x, fs, q): lowest frequency where cumulative non-DC power reaches fraction q",
        eval: |a| Value::Scalar(spectrum::edge(a[0].values(), a[1].scalar(), a[2].scalar())),
        arg_check: Some(|c| {
            check_fs(c)?;
            match c[2] {
                Some(q) if !(0.0..=1.0).contains(&q) => Err(format!("spectral edge level {q} outside [0, 1]")),
                _ => Ok(()),
            }
        }),
    },
    Builtin {
        name: "band_power",
        params: &[V, S, S, S],
        ret: S,
        summary: "band_power(x, fs, lo, hi): sum of |X_k|^2 over non-DC bins with lo <= f_k < hi",
        eval: |a| {
            Value::Scalar(spectrum::band_power(
                a[0].values(),
                a[1].scalar(),
                a[2].scalar(),
                a[3].scalar(),
            ))
        },
        arg_check: Some(|c| {
            check_fs(c)?;
            match (c[2], c[3]) {
                (Some(lo), Some(hi)) if lo >= hi => Err(format!("band_power needs lo < hi, got [{lo}, {hi})")),
                _ => Ok(()),
            }
        }),
    },
];

fn check_fs(c: &[Option<f64>]) -> Result<(), String> {
    match c[1] {
        Some(fs) if fs <= 0.0 => Err(format!("sample rate {fs} must be positive")),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolveError {
    Unknown,
    /// The name exists but no overload takes this many arguments.
    Arity { expected: Vec<usize> },
    /// The name and arity match but argument kinds do not.
    Kinds { expected: Vec<String> },
}

pub fn is_builtin(name: &str) -> bool {
    CATALOG.iter().any(|b| b.name == name)
}

pub fn resolve(name: &str, kinds: &[Kind]) -> Result<&'static Builtin, ResolveError> {
    let candidates: Vec<&'static Builtin> = CATALOG.iter().filter(|b| b.name == name).collect();
    if candidates.is_empty() {
        return Err(ResolveError::Unknown);
    }
    let same_arity: Vec<&&'static Builtin> = candidates.iter().filter(|b| b.params.len() == kinds.len()).collect();
    if same_arity.is_empty() {
        let mut expected: Vec<usize> = candidates.iter().map(|b| b.params.len()).collect();
        expected.dedup();
        return Err(ResolveError::Arity { expected });
    }
    same_arity
        .iter()
        .find(|b| b.params == kinds)
        .map(|b| **b)
        .ok_or_else(|| ResolveError::Kinds {
            expected: same_arity.iter().map(|b| b.signature()).collect(),
        })
}

/// Plain numeric kernels behind the statistical builtins.
pub mod num {
    pub fn mean(x: &[f64]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        x.iter().sum::<f64>() / x.len() as f64
    }

    fn is_constant(x: &[f64]) -> bool {
        x.windows(2).all(|w| w[0] == w[1])
    }

    /// Central moments m2, m3, m4 (population).
    fn central_moments(x: &[f64]) -> (f64, f64, f64) {
        let mu = mean(x);
        let n = x.len() as f64;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in x {
            let d = v - mu;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        (m2 / n, m3 / n, m4 / n)
    }

    pub fn var(x: &[f64]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        if is_constant(x) {
            return 0.0;
        }
        central_moments(x).0
    }

    pub fn std(x: &[f64]) -> f64 {
        var(x).sqrt()
    }

    pub fn min(x: &[f64]) -> f64 {
        x.iter().copied().reduce(f64::min).unwrap_or(f64::NAN)
    }

    pub fn max(x: &[f64]) -> f64 {
        x.iter().copied().reduce(f64::max).unwrap_or(f64::NAN)
    }

    pub fn range(x: &[f64]) -> f64 {
        max(x) - min(x)
    }

    fn sorted(x: &[f64]) -> Vec<f64> {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        s
    }

    pub fn quantile(x: &[f64], q: f64) -> f64 {
        if x.is_empty() || !(0.0..=1.0).contains(&q) {
            return f64::NAN;
        }
        quantile_sorted(&sorted(x), q)
    }

    pub(crate) fn quantile_sorted(s: &[f64], q: f64) -> f64 {
        let pos = q * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        if lo == hi {
            s[lo]
        } else {
            s[lo] + (s[hi] - s[lo]) * frac
        }
    }

    pub fn median(x: &[f64]) -> f64 {
        quantile(x, 0.5)
    }

    pub fn skewness(x: &[f64]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        if is_constant(x) {
            return 0.0;
        }
        let (m2, m3, _) = central_moments(x);
        if m2 == 0.0 {
            0.0
        } else {
            m3 / m2.powf(1.5)
        }
    }

    pub fn kurtosis(x: &[f64]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        if is_constant(x) {
            return 0.0;
        }
        let (m2, _, m4) = central_moments(x);
        if m2 == 0.0 {
            0.0
        } else {
            m4 / (m2 * m2) - 3.0
        }
    }

    pub fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rms(x: &[f64]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        (energy(x) / x.len() as f64).sqrt()
    }

    pub fn zero_crossings(x: &[f64]) -> f64 {
        let mut count = 0usize;
        let mut last: Option<bool> = None;
        for &v in x {
            if v == 0.0 || v.is_nan() {
                last = None;
                continue;
            }
            let positive = v > 0.0;
            if matches!(last, Some(p) if p != positive) {
                count += 1;
            }
            last = Some(positive);
        }
        count as f64
    }

    pub fn diff(x: &[f64]) -> Vec<f64> {
        x.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn line_length(x: &[f64]) -> f64 {
        x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn mean_abs_diff(x: &[f64]) -> f64 {
        if x.len() < 2 {
            return f64::NAN;
        }
        line_length(x) / (x.len() - 1) as f64
    }

    pub fn n_peaks(x: &[f64]) -> f64 {
        x.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count() as f64
    }

    pub fn length(x: &[f64]) -> f64 {
        x.len() as f64
    }

    fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
        if a.len() < 2 || is_constant(a) || is_constant(b) {
            return None;
        }
        let (ma, mb) = (mean(a), mean(b));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        let denom = (saa * sbb).sqrt();
        (denom > 0.0).then(|| sab / denom)
    }

    pub fn autocorr(x: &[f64], lag: f64) -> f64 {
        if !(lag >= 1.0) || lag.fract() != 0.0 || lag >= x.len() as f64 {
            return 0.0;
        }
        let lag = lag as usize;
        let n = x.len();
        pearson(&x[..n - lag], &x[lag..]).unwrap_or(0.0)
    }

    pub fn normalize(x: &[f64]) -> Vec<f64> {
        if is_constant(x) {
            return vec![0.0; x.len()];
        }
        let mu = mean(x);
        let sd = std(x);
        x.iter().map(|v| (v - mu) / sd).collect()
    }

    pub fn resample(x: &[f64], n: f64) -> Vec<f64> {
        if !(n >= 2.0 && n.fract() == 0.0 && n <= 1e6) || x.is_empty() {
            return vec![f64::NAN];
        }
        let n = n as usize;
        if x.len() == 1 {
            return vec![x[0]; n];
        }
        let scale = (x.len() - 1) as f64 / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let pos = i as f64 * scale;
                let lo = (pos.floor() as usize).min(x.len() - 1);
                let hi = (lo + 1).min(x.len() - 1);
                let frac = pos - lo as f64;
                x[lo] + (x[hi] - x[lo]) * frac
            })
            .collect()
    }
}

/// Spectral kernels on the one-sided magnitude spectrum of the plain DFT
/// (no window, no detrending). Bins k = 1..=N/2 are used; the DC bin is
/// always excluded.
pub mod spectrum {
    use super::*;

    thread_local! {
        static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    }

    pub struct OneSided {
        pub freqs: Vec<f64>,
        pub magnitude: Vec<f64>,
    }

    impl OneSided {
        pub fn power(&self) -> impl Iterator<Item = f64> + '_ {
            self.magnitude.iter().map(|m| m * m)
        }
    }

    /// None when the input is too short (< 4 samples), the rate is not
    /// positive, or a sample is not finite.
    pub fn one_sided(x: &[f64], fs: f64) -> Option<OneSided> {
        let n = x.len();
        if n < 4 || !(fs.is_finite() && fs > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
        let half = n / 2;
        let freqs = (1..=half).map(|k| k as f64 * fs / n as f64).collect();
        let magnitude = buf[1..=half].iter().map(|c| c.norm()).collect();
        Some(OneSided { freqs, magnitude })
    }

    pub fn centroid(x: &[f64], fs: f64) -> f64 {
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let total: f64 = s.magnitude.iter().sum();
        let weighted: f64 = s.freqs.iter().zip(&s.magnitude).map(|(f, m)| f * m).sum();
        div(weighted, total)
    }

    pub fn spread(x: &[f64], fs: f64) -> f64 {
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let total: f64 = s.magnitude.iter().sum();
        let c = div(s.freqs.iter().zip(&s.magnitude).map(|(f, m)| f * m).sum(), total);
        let second: f64 = s.freqs.iter().zip(&s.magnitude).map(|(f, m)| (f - c) * (f - c) * m).sum();
        div(second, total).sqrt()
    }

    pub fn peak_frequency(x: &[f64], fs: f64) -> f64 {
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let mut best = 0;
        for (k, &m) in s.magnitude.iter().enumerate() {
            if m > s.magnitude[best] {
                best = k;
            }
        }
        s.freqs[best]
    }

    pub fn mean_frequency(x: &[f64], fs: f64) -> f64 {
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let total: f64 = s.power().sum();
        let weighted: f64 = s.freqs.iter().zip(s.power()).map(|(f, p)| f * p).sum();
        div(weighted, total)
    }

    pub fn edge(x: &[f64], fs: f64, q: f64) -> f64 {
        if !(0.0..=1.0).contains(&q) {
            return f64::NAN;
        }
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let total: f64 = s.power().sum();
        if total == 0.0 {
            return f64::NAN;
        }
        let mut acc = 0.0;
        for (f, p) in s.freqs.iter().zip(s.power()) {
            acc += p;
            if acc >= q * total {
                return *f;
            }
        }
        *s.freqs.last().expect("at least two bins")
    }

    pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        if !(lo < hi) {
            return f64::NAN;
        }
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        s.freqs
            .iter()
            .zip(s.power())
            .filter(|(f, _)| lo <= **f && **f < hi)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn entropy(x: &[f64], fs: f64) -> f64 {
        let Some(s) = one_sided(x, fs) else { return f64::NAN };
        let total: f64 = s.power().sum();
        if total == 0.0 {
            return 0.0;
        }
        -s.power()
            .map(|p| p / total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    fn div(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            f64::NAN
        } else {
            a / b
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn catalog_examples() {
        assert_eq!(num::skewness(&[1.0, 2.0, 3.0]), 0.0);
        assert!((num::std(&[1.0, 2.0, 3.0]) - 0.816496580927726).abs() < 1e-15);
        assert_eq!(num::zero_crossings(&[1.0, -1.0, 1.0, -1.0]), 3.0);
        assert_eq!(num::zero_crossings(&[1.0, 0.0, -1.0]), 0.0);
        assert_eq!(num::quantile(&[4.0, 1.0, 3.0, 2.0], 0.25), 1.75);
        assert_eq!(num::n_peaks(&[0.0, 2.0, 1.0, 3.0, 3.0, 1.0]), 1.0);
    }

    #[test]
    fn constant_series_has_zero_shape_moments() {
        let x = [0.1; 7];
        assert_eq!(num::skewness(&x), 0.0);
        assert_eq!(num::kurtosis(&x), 0.0);
        assert_eq!(num::std(&x), 0.0);
        assert_eq!(num::normalize(&x), vec![0.0; 7]);
        assert_eq!(num::autocorr(&x, 1.0), 0.0);
    }

    #[test]
    fn sine_peak_frequency() {
        let x: Vec<f64> = (0..64).map(|i| (2.0 * PI * 8.0 * i as f64 / 64.0).sin()).collect();
        assert_eq!(spectrum::peak_frequency(&x, 64.0), 8.0);
    }

    #[test]
    fn constant_series_spectral_entropy_is_zero() {
        assert_eq!(spectrum::entropy(&[3.0; 32], 16.0), 0.0);
        assert!(spectrum::centroid(&[3.0; 32], 16.0).is_nan());
    }

    #[test]
    fn short_input_is_nan() {
        assert!(spectrum::peak_frequency(&[1.0, 2.0, 3.0], 10.0).is_nan());
        assert!(spectrum::band_power(&[1.0, 2.0, 3.0, 4.0], 10.0, 3.0, 1.0).is_nan());
    }

    #[test]
    fn resolve_reports_arity_and_kinds() {
        assert!(resolve("meen", &[Kind::Vector]).is_err_and(|e| e == ResolveError::Unknown));
        assert!(matches!(resolve("mean", &[]), Err(ResolveError::Arity { .. })));
        assert!(matches!(resolve("mean", &[Kind::Scalar]), Err(ResolveError::Kinds { .. })));
        assert_eq!(resolve("abs", &[Kind::Scalar]).unwrap().ret, Kind::Scalar);
        assert_eq!(resolve("abs", &[Kind::Vector]).unwrap().ret, Kind::Vector);
    }

    #[test]
    fn resample_keeps_endpoints() {
        let y = num::resample(&[0.0, 1.0, 4.0], 5.0);
        assert_eq!(y, vec![0.0, 0.5, 1.0, 2.5, 4.0]);
    }
}
