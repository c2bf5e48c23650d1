use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::pipeline::{DatasetRecord, Engine, PipelineConfig, PipelineError, RunStore};

use super::{AttributionCounts, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Threshold,
    K,
    Alpha,
    LanguagePair,
    Verifier,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Threshold => "threshold",
            SweepAxis::K => "k",
            SweepAxis::Alpha => "alpha",
            SweepAxis::LanguagePair => "language_pair",
            SweepAxis::Verifier => "verifier",
        }
    }

    /// `base` with this axis set to `value`.
    ///
    /// Thresholds apply to the base mode; language pairs are written
    /// `src-tgt`; verifier values are model ids.
    pub fn apply(
        self,
        base: &PipelineConfig,
        value: &str,
    ) -> Result<PipelineConfig, PipelineError> {
        let bad = |what: &str| PipelineError::Config(format!("invalid {what} value {value:?}"));
        let mut cfg = base.clone();
        match self {
            SweepAxis::Threshold => {
                let t: f64 = value.trim().parse().map_err(|_| bad("threshold"))?;
                if cfg.thresholds.for_mode(cfg.mode).is_none() {
                    return Err(PipelineError::Config(format!(
                        "mode {} has no threshold to sweep",
                        cfg.mode
                    )));
                }
                cfg.thresholds.set_for_mode(cfg.mode, t);
            }
            SweepAxis::K => cfg.k = value.trim().parse().map_err(|_| bad("k"))?,
            SweepAxis::Alpha => cfg.alpha = value.trim().parse().map_err(|_| bad("alpha"))?,
            SweepAxis::LanguagePair => {
                let (s, t) = value
                    .split_once(['-', ':', '/'])
                    .ok_or_else(|| bad("language pair"))?;
                cfg.languages.source = s.trim().to_string();
                cfg.languages.target = t.trim().to_string();
            }
            SweepAxis::Verifier => {
                if value.trim().is_empty() {
                    return Err(bad("verifier"));
                }
                cfg.verifier.model = value.trim().to_string();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            SweepAxis::Threshold,
            SweepAxis::K,
            SweepAxis::Alpha,
            SweepAxis::LanguagePair,
            SweepAxis::Verifier,
        ]
        .into_iter()
        .find(|a| a.as_str() == s.replace('-', "_"))
        .ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub report: Option<MetricReport>,
    pub attribution: Option<AttributionCounts>,
    pub error: Option<String>,
    /// Calls that reached a backend rather than the cache.
    pub backend_calls: u64,
    pub cache_hits: u64,
}

/// Run the dataset once per axis value. `build` turns each derived config
/// into an engine; pointing every config at the same cache directory lets
/// coinciding prompts be served from cache. A failing value is recorded
/// and the sweep moves on.
pub fn sweep<F>(
    records: &[DatasetRecord],
    base: &PipelineConfig,
    axis: SweepAxis,
    values: &[String],
    build: F,
    persist: bool,
) -> Vec<SweepRow>
where
    F: Fn(&PipelineConfig) -> Result<Engine, PipelineError>,
{
    values
        .iter()
        .map(|value| {
            let mut row = SweepRow {
                axis,
                value: value.clone(),
                report: None,
                attribution: None,
                error: None,
                backend_calls: 0,
                cache_hits: 0,
            };
            let outcome = axis.apply(base, value).and_then(|cfg| {
                let engine = build(&cfg)?;
                if persist {
                    engine.run_dataset_into(records, &RunStore::for_config(&cfg))
                } else {
                    Ok(engine.run_dataset(records))
                }
            });
            match outcome {
                Ok(traces) => {
                    row.backend_calls = traces.iter().map(|t| t.runtime.backend_calls).sum();
                    row.cache_hits = traces.iter().map(|t| t.runtime.cache_hits).sum();
                    row.report = Some(MetricReport::of(&traces));
                    row.attribution = Some(AttributionCounts::of(&traces));
                }
                Err(e) => {
                    log::warn!("sweep {axis}={value} failed: {e}");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Mode;

    #[test]
    fn axis_application() {
        let base = PipelineConfig {
            mode: Mode::Cm,
            ..Default::default()
        };
        let c = SweepAxis::Threshold.apply(&base, "0.4").unwrap();
        assert_eq!(c.thresholds.cm, 0.4);
        assert_eq!(c.thresholds.cl, base.thresholds.cl);
        let c = SweepAxis::LanguagePair.apply(&base, "en-fr").unwrap();
        assert_eq!(c.languages.target, "fr");
        assert!(SweepAxis::LanguagePair.apply(&base, "en-en").is_err());
        assert!(SweepAxis::K.apply(&base, "0").is_err());
        assert_eq!(SweepAxis::Alpha.apply(&base, "0.25").unwrap().alpha, 0.25);
        assert_eq!(
            SweepAxis::Verifier
                .apply(&base, "small")
                .unwrap()
                .verifier
                .model,
            "small"
        );
        let never = PipelineConfig {
            mode: Mode::NeverRetrieve,
            ..Default::default()
        };
        assert!(SweepAxis::Threshold.apply(&never, "0.5").is_err());
        assert_eq!(
            "language-pair".parse::<SweepAxis>().unwrap(),
            SweepAxis::LanguagePair
        );
    }
}
