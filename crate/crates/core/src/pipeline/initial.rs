//! The statistical and spectral features every run starts from.

use crate::model::{FeatureDescriptor, FeatureSource, Realization};

struct Template {
    suffix: &'static str,
    body: &'static str,
    description: &'static str,
}

const TEMPLATES: &[Template] = &[
    Template { suffix: "mean", body: "mean(@)", description: "mean level" },
    Template { suffix: "std", body: "std(@)", description: "standard deviation" },
    Template { suffix: "max", body: "max(@)", description: "maximum" },
    Template { suffix: "skewness", body: "skewness(@)", description: "skewness of the amplitude distribution" },
    Template { suffix: "kurtosis", body: "kurtosis(@)", description: "excess kurtosis of the amplitude distribution" },
    Template { suffix: "q25", body: "quantile(@, 0.25)", description: "first quartile" },
    Template { suffix: "q50", body: "quantile(@, 0.5)", description: "median" },
    Template { suffix: "q75", body: "quantile(@, 0.75)", description: "third quartile" },
    Template { suffix: "spectral_centroid", body: "spectral_centroid(@, sample_rate(@))", description: "spectral centroid" },
    Template { suffix: "spectral_spread", body: "spectral_spread(@, sample_rate(@))", description: "spectral spread" },
    Template { suffix: "mean_frequency", body: "mean_frequency(@, sample_rate(@))", description: "power-weighted mean frequency" },
    Template { suffix: "peak_frequency", body: "peak_frequency(@, sample_rate(@))", description: "frequency of the spectral peak" },
    Template { suffix: "spectral_edge_25", body: "spectral_edge(@, sample_rate(@), 0.25)", description: "frequency below which 25% of the power lies" },
    Template { suffix: "spectral_edge_50", body: "spectral_edge(@, sample_rate(@), 0.5)", description: "frequency below which 50% of the power lies" },
    Template { suffix: "spectral_edge_75", body: "spectral_edge(@, sample_rate(@), 0.75)", description: "frequency below which 75% of the power lies" },
];

pub const PER_CHANNEL: usize = TEMPLATES.len();

/// One unrealized descriptor plus FeatureScript source per template and
/// channel, channel-major.
pub fn initial_features(channels: &[String]) -> Vec<(FeatureDescriptor, String)> {
    let mut out = Vec::with_capacity(channels.len() * TEMPLATES.len());
    for ch in channels {
        for t in TEMPLATES {
            let name = format!("{ch}_{}", t.suffix);
            let body = t.body.replace('@', ch);
            let source = format!("fn {name}({ch}) -> scalar {{ {body} }}");
            let descriptor = FeatureDescriptor {
                name,
                description: format!("{} of {ch}", t.description),
                rationale: "general-purpose statistical baseline".into(),
                channels: vec![ch.clone()],
                source: FeatureSource::Initial,
                origin_iteration: 0,
                realization: Realization::Unrealized,
                columns: Vec::new(),
            };
            out.push((descriptor, source));
        }
    }
    out
}
