use std::fmt;
use std::str::FromStr;

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::sequence::HeadKind;

/// One component removed or replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Transformer with per-epoch softmax and cross-entropy.
    NoCrf,
    /// Without reconstruction, KL and auxiliary classifier terms.
    NoVae,
    NoScl,
    NoAugmentation,
    /// Linear emission layer, no transformer, no CRF.
    Logistic,
    /// Linear emission layer and CRF.
    LogisticCrf,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoCrf,
        Ablation::NoVae,
        Ablation::NoScl,
        Ablation::NoAugmentation,
        Ablation::Logistic,
        Ablation::LogisticCrf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoCrf => "no_crf",
            Ablation::NoVae => "no_vae",
            Ablation::NoScl => "no_scl",
            Ablation::NoAugmentation => "no_aug",
            Ablation::Logistic => "logistic",
            Ablation::LogisticCrf => "logistic_crf",
        }
    }

    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        match self {
            Ablation::NoCrf => c.sequence.head = HeadKind::TransformerSoftmax,
            Ablation::NoVae => {
                c.terms.vae = false;
                c.terms.classifiers = false;
            }
            Ablation::NoScl => c.terms.supervised_contrastive = false,
            Ablation::NoAugmentation => c.augmentation.enabled = false,
            Ablation::Logistic => c.sequence.head = HeadKind::Logistic,
            Ablation::LogisticCrf => c.sequence.head = HeadKind::LogisticCrf,
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "no_crf" => Ok(Ablation::NoCrf),
            "no_vae" => Ok(Ablation::NoVae),
            "no_scl" => Ok(Ablation::NoScl),
            "no_aug" | "no_augmentation" => Ok(Ablation::NoAugmentation),
            "logistic" => Ok(Ablation::Logistic),
            "logistic_crf" => Ok(Ablation::LogisticCrf),
            other => Err(Error::Config(format!("unknown ablation toggle {other:?}"))),
        }
    }
}

/// The base configuration (named `full`) followed by one configuration per toggle.
pub fn ablation_variants(
    base: &PipelineConfig,
    toggles: &[&str],
) -> Result<Vec<(String, PipelineConfig)>> {
    let mut out = vec![("full".to_string(), base.clone())];
    for t in toggles {
        let a: Ablation = t.parse()?;
        out.push((a.name().to_string(), a.apply(base)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_toggle_rejected() {
        assert!(matches!(
            ablation_variants(&PipelineConfig::default(), &["no_vae", "no_magic"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toggles_touch_one_component() {
        let base = PipelineConfig::default();
        let v = ablation_variants(&base, &["no_crf", "no_scl", "no_aug", "no_vae"]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v[1].1.sequence.head, HeadKind::TransformerSoftmax);
        assert!(!v[2].1.terms.supervised_contrastive && v[2].1.terms.vae);
        assert!(!v[3].1.augmentation.enabled);
        assert!(
            !v[4].1.terms.vae && !v[4].1.terms.classifiers && v[4].1.terms.supervised_contrastive
        );
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }
}
