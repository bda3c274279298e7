//! Probe scoring and per-nationality bias classification.
//!
//! Each probe variant is scored against the masked baseline of its group; the
//! per-nationality mean of those differences is the relative sentiment, and a
//! two-sided Wilcoxon signed-rank test on them decides the bias class.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{score, SentimentModel};
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::lexica::ProbeGroup;
use crate::stats::{self, BootstrapCi, PearsonResult, WilcoxonResult};

/// Below this many differences no two-sided exact test can reach p < 0.05,
/// so the nationality is reported neutral and flagged.
pub const MIN_PAIRS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub nationality: String,
    pub template_id: String,
    pub adjective: String,
    /// Polarity of the bound filler; recorded only, never used to flip signs.
    pub adjective_polarity: i8,
    /// `score(variant) - score(baseline)`, in `[-1, 1]`.
    pub diff: f64,
}

pub fn paired_scores(
    model: &SentimentModel,
    probes: &[ProbeGroup],
    encoder: &dyn Encoder,
) -> Result<Vec<PairedDiff>> {
    if encoder.dimension() != model.dimension {
        return Err(Error::DimensionMismatch {
            expected: model.dimension,
            actual: encoder.dimension(),
        });
    }
    let mut out = Vec::with_capacity(probes.iter().map(|g| g.variants.len()).sum());
    for group in probes {
        let wrap = |nationality: &str, e: Error| Error::Probe {
            template: group.template_id.clone(),
            adjective: group.adjective.clone(),
            nationality: nationality.to_string(),
            source: Box::new(e),
        };
        let baseline = encoder
            .encode(&group.baseline_text)
            .and_then(|e| score(model, &e))
            .map_err(|e| wrap("<baseline>", e))?;
        for v in &group.variants {
            let s = encoder
                .encode(&v.text)
                .and_then(|e| score(model, &e))
                .map_err(|e| wrap(&v.nationality, e))?;
            out.push(PairedDiff {
                nationality: v.nationality.clone(),
                template_id: group.template_id.clone(),
                adjective: group.adjective.clone(),
                adjective_polarity: group.adjective_polarity,
                diff: s - baseline,
            });
        }
    }
    Ok(out)
}

fn sorted(diffs: &[f64]) -> Vec<f64> {
    let mut v = diffs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean difference. Summation runs over the sorted values so the result does
/// not depend on probe order.
pub fn relative_sentiment(diffs: &[f64]) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::invalid("relative sentiment of an empty set"));
    }
    Ok(sorted(diffs).iter().sum::<f64>() / diffs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasClass {
    Negative,
    Neutral,
    Positive,
}

impl BiasClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasClass::Negative => "negative",
            BiasClass::Neutral => "neutral",
            BiasClass::Positive => "positive",
        }
    }

    /// Chart colour key: red for negative, black for no bias, green for positive.
    pub fn color(self) -> &'static str {
        match self {
            BiasClass::Negative => "red",
            BiasClass::Neutral => "black",
            BiasClass::Positive => "green",
        }
    }
}

impl std::fmt::Display for BiasClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            alpha: 0.05,
            bootstrap_b: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NationalityResult {
    pub nationality: String,
    pub relative_sentiment: f64,
    pub ci: BootstrapCi,
    pub wilcoxon: WilcoxonResult,
    pub bias_class: BiasClass,
    pub n_pairs: usize,
    /// Fewer than [`MIN_PAIRS`] differences; class forced to neutral.
    pub underpowered: bool,
}

fn bootstrap_seed(seed: u64, nationality: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(nationality.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn classify_bias(
    nationality: &str,
    diffs: &[f64],
    params: &ClassifyParams,
) -> Result<NationalityResult> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {} outside (0, 1)", params.alpha)));
    }
    let values = sorted(diffs);
    let mean = relative_sentiment(&values)?;
    let wilcoxon = stats::wilcoxon_signed_rank(&values)?;
    let ci = if values.len() >= 2 {
        stats::bootstrap_ci(
            &values,
            params.bootstrap_b,
            params.level,
            bootstrap_seed(params.seed, nationality),
        )?
    } else {
        BootstrapCi {
            low: mean,
            high: mean,
            level: params.level,
            b: 0,
        }
    };
    let underpowered = values.len() < MIN_PAIRS;
    let bias_class = if underpowered || !wilcoxon.is_significant(params.alpha) {
        BiasClass::Neutral
    } else if mean < 0.0 {
        BiasClass::Negative
    } else if mean > 0.0 {
        BiasClass::Positive
    } else {
        BiasClass::Neutral
    };
    Ok(NationalityResult {
        nationality: nationality.to_string(),
        relative_sentiment: mean,
        ci,
        wilcoxon,
        bias_class,
        n_pairs: values.len(),
        underpowered,
    })
}

/// Group differences by nationality and classify each group. Output follows
/// the order in which nationalities first appear in `diffs`.
pub fn classify_all(diffs: &[PairedDiff], params: &ClassifyParams) -> Result<Vec<NationalityResult>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for d in diffs {
        let entry = groups.entry(&d.nationality).or_insert_with(|| {
            order.push(&d.nationality);
            Vec::new()
        });
        entry.push(d.diff);
    }
    order
        .into_iter()
        .map(|n| classify_bias(n, &groups[n], params))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub setup_a: String,
    pub setup_b: String,
    pub pearson: PearsonResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMatrix {
    pub setups: Vec<String>,
    /// One cell per unordered pair of distinct setups.
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessMatrix {
    /// Correlation between two setups; 1 on the diagonal.
    pub fn r(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return self.setups.iter().any(|s| s == a).then_some(1.0);
        }
        self.cells
            .iter()
            .find(|c| (c.setup_a == a && c.setup_b == b) || (c.setup_a == b && c.setup_b == a))
            .map(|c| c.pearson.r)
    }

    pub fn mean_r(&self) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        Some(self.cells.iter().map(|c| c.pearson.r).sum::<f64>() / self.cells.len() as f64)
    }
}

/// Pearson correlation of relative-sentiment vectors, aligned by
/// nationality, for every pair of setups.
pub fn robustness_matrix(sets: &[(String, Vec<NationalityResult>)]) -> Result<RobustnessMatrix> {
    let mut aligned: Vec<BTreeMap<&str, f64>> = Vec::with_capacity(sets.len());
    for (name, results) in sets {
        let map: BTreeMap<&str, f64> = results
            .iter()
            .map(|r| (r.nationality.as_str(), r.relative_sentiment))
            .collect();
        if map.len() != results.len() {
            return Err(Error::invalid(format!("setup `{name}` lists a nationality twice")));
        }
        aligned.push(map);
    }
    if let Some(first) = aligned.first() {
        let keys: BTreeSet<&str> = first.keys().copied().collect();
        for (i, m) in aligned.iter().enumerate().skip(1) {
            let other: BTreeSet<&str> = m.keys().copied().collect();
            if other != keys {
                let diff: Vec<&str> = keys.symmetric_difference(&other).copied().collect();
                return Err(Error::invalid(format!(
                    "setups `{}` and `{}` cover different nationalities: {:?}",
                    sets[0].0, sets[i].0, diff
                )));
            }
        }
    }
    let mut cells = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let x: Vec<f64> = aligned[i].values().copied().collect();
            let y: Vec<f64> = aligned[j].values().copied().collect();
            cells.push(RobustnessCell {
                setup_a: sets[i].0.clone(),
                setup_b: sets[j].0.clone(),
                pearson: stats::pearson(&x, &y)?,
            });
        }
    }
    Ok(RobustnessMatrix {
        setups: sets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Calibration, ClassifierKind, Weights};
    use crate::embedding::{seeded_unit_axis, SyntheticEncoder};
    use crate::lexica::{gen_probes, LexiconEntry, LexiconKind, Slot, SlotFillers, Template, TemplateSource};

    fn params() -> ClassifyParams {
        ClassifyParams {
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn relative_sentiment_basics() {
        assert_eq!(relative_sentiment(&[0.1, -0.1]).unwrap(), 0.0);
        assert!(relative_sentiment(&[]).is_err());
    }

    #[test]
    fn consistent_negative_shift_is_negative() {
        let diffs: Vec<f64> = (0..20).map(|i| -0.3 + 0.001 * i as f64).collect();
        let r = classify_bias("X", &diffs, &params()).unwrap();
        assert_eq!(r.bias_class, BiasClass::Negative);
        assert!(r.wilcoxon.p_two_sided <= 2.0 / 2f64.powi(20) + 1e-18);
        assert!(r.ci.high < 0.0);
    }

    #[test]
    fn five_diffs_are_underpowered() {
        let r = classify_bias("X", &[-0.3; 5], &params()).unwrap();
        assert!(r.underpowered);
        assert_eq!(r.bias_class, BiasClass::Neutral);
        let one = classify_bias("X", &[0.2], &params()).unwrap();
        assert_eq!((one.ci.low, one.ci.high), (0.2, 0.2));
    }

    #[test]
    fn order_invariance() {
        let diffs = [0.3, -0.1, 0.25, 0.05, 0.4, 0.11, -0.02, 0.3];
        let mut rev = diffs;
        rev.reverse();
        let a = classify_bias("X", &diffs, &params()).unwrap();
        let b = classify_bias("X", &rev, &params()).unwrap();
        assert_eq!(a, b);
    }

    fn linear_model(axis: &[f64]) -> SentimentModel {
        SentimentModel {
            kind: ClassifierKind::Svm,
            dimension: axis.len(),
            weights: Weights::Linear {
                w: axis.to_vec(),
                bias: 0.0,
            },
            calibration: Calibration::IDENTITY,
            seed: 0,
            metadata: Default::default(),
        }
    }

    fn probes(nats: &[&str]) -> Vec<ProbeGroup> {
        let templates = vec![
            Template::new("a", "en", "This [Nationality] person is [Adj].", TemplateSource::Native).unwrap(),
            Template::new("b", "en", "My [Nationality] friend is [Adj].", TemplateSource::Native).unwrap(),
        ];
        let adj = vec![LexiconEntry::new("neutral", LexiconKind::NeutralAdjective, 0, "en").unwrap()];
        let nats: Vec<String> = nats.iter().map(|s| s.to_string()).collect();
        gen_probes(&templates, &SlotFillers::new().with(Slot::Adj, adj), &nats, "[MASK]").unwrap()
    }

    #[test]
    fn paired_scores_count_and_sign() {
        let axis = seeded_unit_axis(8, 1);
        let enc = SyntheticEncoder::new(
            8,
            2,
            axis.clone(),
            BTreeMap::from([("groupX".to_string(), -0.5)]),
            vec![],
            "[MASK]",
        )
        .unwrap();
        let model = linear_model(&axis);
        let diffs = paired_scores(&model, &probes(&["groupX", "groupY", "groupZ"]), &enc).unwrap();
        assert_eq!(diffs.len(), 6);
        // w is the axis itself, so only the injected coefficient moves the margin
        for d in diffs.iter().filter(|d| d.nationality == "groupX") {
            assert!(d.diff < 0.0);
        }
        for d in diffs.iter().filter(|d| d.nationality != "groupX") {
            assert!(d.diff.abs() < 1e-12);
        }
    }

    #[test]
    fn mask_as_nationality_gives_zero_diff() {
        let axis = seeded_unit_axis(8, 1);
        let enc = SyntheticEncoder::new(8, 2, axis.clone(), BTreeMap::new(), vec![], "[MASK]").unwrap();
        let diffs = paired_scores(&linear_model(&seeded_unit_axis(8, 9)), &probes(&["[MASK]"]), &enc).unwrap();
        assert!(diffs.iter().all(|d| d.diff == 0.0));
    }

    #[test]
    fn paired_scores_dimension_mismatch() {
        let enc = SyntheticEncoder::new(4, 0, seeded_unit_axis(4, 0), BTreeMap::new(), vec![], "[MASK]").unwrap();
        let model = linear_model(&seeded_unit_axis(8, 0));
        assert!(paired_scores(&model, &probes(&["A"]), &enc).is_err());
    }

    fn result(n: &str, rs: f64) -> NationalityResult {
        let mut r = classify_bias(n, &[rs; 6], &params()).unwrap();
        r.relative_sentiment = rs;
        r
    }

    #[test]
    fn robustness_self_pair_and_mismatch() {
        let a = vec![result("A", 0.1), result("B", -0.2), result("C", 0.3)];
        let m = robustness_matrix(&[("x".into(), a.clone()), ("y".into(), a.clone())]).unwrap();
        assert_eq!(m.cells.len(), 1);
        assert!((m.r("x", "y").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.r("x", "x"), Some(1.0));

        let other = vec![result("D", 0.1), result("B", -0.2), result("C", 0.3)];
        assert!(robustness_matrix(&[("x".into(), a), ("y".into(), other)]).is_err());
    }

    #[test]
    fn robustness_alignment_is_by_name() {
        let a = vec![result("A", 0.1), result("B", -0.2), result("C", 0.3)];
        let b = vec![result("C", 0.3), result("A", 0.1), result("B", -0.2)];
        let m = robustness_matrix(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert!((m.cells[0].pearson.r - 1.0).abs() < 1e-12);
    }
}
