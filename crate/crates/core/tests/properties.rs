use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use sentiprobe::embedding::{self, synthetic_encode};
use sentiprobe::lexica::{self, LexiconEntry, LexiconKind, Slot, SlotFillers, Template, TemplateSource};
use sentiprobe::pipeline::{self, ClassifyParams};
use sentiprobe::stats;
use sentiprobe::text;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,8}"
}

fn nationality() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{2,9}( [A-Z][a-z]{2,6})?"
}

fn template() -> impl Strategy<Value = Template> {
    ("[A-Za-z ,]{0,12}", "[a-z ]{1,10}", "[a-z ,]{0,10}").prop_map(|(a, b, c)| {
        let pattern = format!("{a} [Nationality] {b} [Adj]{c}.");
        Template::new("p", "en", &pattern, TemplateSource::Native).unwrap()
    })
}

fn brute_force_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let less = d.iter().filter(|v| v.abs() < x.abs()).count() as f64;
            let eq = d.iter().filter(|v| v.abs() == x.abs()).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let w: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le += (s <= w + 1e-9) as u32;
        ge += (s >= w - 1e-9) as u32;
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probe_round_trip(
        t in template(),
        adjectives in proptest::collection::btree_set(word(), 1..4),
        nationalities in proptest::collection::btree_set(nationality(), 1..5),
    ) {
        let adjs: Vec<LexiconEntry> = adjectives
            .iter()
            .map(|a| LexiconEntry::new(a, LexiconKind::NeutralAdjective, 0, "en").unwrap())
            .collect();
        let nats: Vec<String> = nationalities.into_iter().collect();
        let groups = lexica::gen_probes(
            std::slice::from_ref(&t),
            &SlotFillers::new().with(Slot::Adj, adjs.clone()),
            &nats,
            "[MASK]",
        ).unwrap();
        prop_assert_eq!(groups.len(), adjs.len());
        for g in &groups {
            prop_assert_eq!(g.variants.len(), nats.len());
            for v in &g.variants {
                // substitute back at the slot position: the text before the
                // slot is shared by baseline and variant
                let prefix = t.pattern.split("[Nationality]").next().unwrap();
                prop_assert!(v.text.starts_with(prefix));
                let rest = &v.text[prefix.len()..];
                prop_assert!(rest.starts_with(&v.nationality));
                let rebuilt = format!("{prefix}[MASK]{}", &rest[v.nationality.len()..]);
                prop_assert_eq!(&rebuilt, &g.baseline_text);
                prop_assert!(!v.text.contains('['));
            }
        }
    }

    #[test]
    fn training_cardinality_and_labels(
        n_templates in 1usize..4,
        nouns in proptest::collection::btree_set(word(), 1..5),
        pos in proptest::collection::btree_set("p[a-z]{3}", 0..4),
        neg in proptest::collection::btree_set("n[a-z]{3}", 1..4),
    ) {
        let templates: Vec<Template> = (0..n_templates)
            .map(|i| Template::new(format!("t{i}"), "en", format!("T{i} [Noun] is [Adj]."), TemplateSource::Native).unwrap())
            .collect();
        let nouns: Vec<LexiconEntry> = nouns.iter().map(|n| LexiconEntry::new(n, LexiconKind::Noun, 0, "en").unwrap()).collect();
        let adjs: Vec<LexiconEntry> = pos.iter().map(|a| (a, 1)).chain(neg.iter().map(|a| (a, -1)))
            .map(|(a, p)| LexiconEntry::new(a, LexiconKind::PolarAdjective, p, "en").unwrap())
            .collect();
        let out = lexica::gen_training(&templates, &nouns, &adjs).unwrap();
        prop_assert_eq!(out.len(), templates.len() * nouns.len() * adjs.len());
        let positives = out.iter().filter(|i| i.label == 1).count();
        prop_assert_eq!(positives, pos.len() * templates.len() * nouns.len());
        for i in &out {
            let adj = adjs.iter().find(|a| a.surface == i.adjective).unwrap();
            prop_assert_eq!(i.label, adj.polarity);
        }
    }

    #[test]
    fn render_injective(a in proptest::collection::btree_set(word(), 2..6)) {
        let t = Template::new("t", "en", "A [Noun] felt [Adj].", TemplateSource::Native).unwrap();
        let words: Vec<&String> = a.iter().collect();
        let mut seen = BTreeSet::new();
        for n in &words {
            for adj in &words {
                if n == adj { continue; }
                let b = BTreeMap::from([(Slot::Noun, n.as_str()), (Slot::Adj, adj.as_str())]);
                prop_assert!(seen.insert(lexica::render(&t, &b).unwrap()));
            }
        }
    }

    #[test]
    fn pearson_symmetry_and_affine(
        xy in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
        prop_assume!(stats::pearson(&x, &y).is_ok());
        let r = stats::pearson(&x, &y).unwrap();
        let rt = stats::pearson(&y, &x).unwrap();
        prop_assert!((r.r - rt.r).abs() < 1e-12);
        prop_assert!((r.p_two_sided - rt.p_two_sided).abs() < 1e-9);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((stats::pearson(&ax, &y).unwrap().r - r.r).abs() < 1e-9);
        let nx: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((stats::pearson(&nx, &y).unwrap().r + r.r).abs() < 1e-9);
        prop_assert!(r.r.abs() <= 1.0 && (0.0..=1.0).contains(&r.p_two_sided));
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration(
        diffs in proptest::collection::vec(prop_oneof![(-3i32..=3).prop_map(|v| v as f64), -5.0f64..5.0], 1..13),
    ) {
        let r = stats::wilcoxon_signed_rank(&diffs).unwrap();
        if r.degenerate {
            prop_assert_eq!(r.p_two_sided, 1.0);
        } else {
            prop_assert!((r.p_two_sided - brute_force_p(&diffs)).abs() < 1e-12);
            let n = r.n_effective as f64;
            prop_assert!(r.w_statistic >= 0.0 && r.w_statistic <= n * (n + 1.0) / 2.0);
        }
    }

    #[test]
    fn affine_score_map_keeps_classes(
        scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 6..30),
    ) {
        let params = ClassifyParams { bootstrap_b: 200, ..Default::default() };
        let diffs: Vec<f64> = scores.iter().map(|(v, b)| v - b).collect();
        let mapped: Vec<f64> = scores.iter().map(|(v, b)| (0.5 * v + 0.1) - (0.5 * b + 0.1)).collect();
        for (d, m) in diffs.iter().zip(&mapped) {
            prop_assert_eq!(d.partial_cmp(&0.0), m.partial_cmp(&0.0));
        }
        let a = pipeline::classify_bias("n", &diffs, &params).unwrap();
        let b = pipeline::classify_bias("n", &mapped, &params).unwrap();
        prop_assert_eq!(a.bias_class, b.bias_class);
    }

    #[test]
    fn permutation_invariance(
        diffs in proptest::collection::vec(-1.0f64..1.0, 6..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = diffs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let params = ClassifyParams { bootstrap_b: 200, ..Default::default() };
        let a = pipeline::classify_bias("n", &diffs, &params).unwrap();
        let b = pipeline::classify_bias("n", &shuffled, &params).unwrap();
        prop_assert_eq!(a.relative_sentiment.to_bits(), b.relative_sentiment.to_bits());
        prop_assert_eq!(a.wilcoxon.p_two_sided.to_bits(), b.wilcoxon.p_two_sided.to_bits());
        prop_assert_eq!(a.ci, b.ci);
    }

    #[test]
    fn synthetic_linearity(
        coef in -2.0f64..2.0,
        seed in any::<u64>(),
        dim in 2usize..32,
        body in "[a-z ]{0,20}",
    ) {
        let axis = embedding::seeded_unit_axis(dim, seed ^ 1);
        let bias = BTreeMap::from([("groupQ".to_string(), coef)]);
        let variant = synthetic_encode(&format!("A groupQ {body}"), seed, &axis, &bias, &[]);
        let baseline = synthetic_encode(&format!("A [MASK] {body}"), seed, &axis, &bias, &[]);
        let delta: Vec<f64> = variant.iter().zip(&baseline).map(|(a, b)| a - b).collect();
        prop_assert!((embedding::project(&delta, &axis) - coef).abs() < 1e-9);
    }

    #[test]
    fn masking_removes_every_mention(
        before in "[a-z ]{0,10}",
        after in "[a-z ]{0,10}",
        term in nationality(),
    ) {
        let s = format!("{before} {term} {after} {term}.");
        let masked = sentiprobe::corpus::mask_mentions(&s, &term, "[MASK]").unwrap();
        prop_assert!(!text::contains_word(&masked, &term));
        prop_assert_eq!(masked.matches("[MASK]").count(), text::word_matches(&s, &term).len());
    }
}

#[test]
fn bootstrap_width_shrinks_with_n() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut widths = Vec::new();
    for n in [100, 400, 1600] {
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let ci = stats::bootstrap_ci(&xs, 1000, 0.95, 1).unwrap();
        let width = ci.high - ci.low;
        // compare with the normal-theory width for this sample
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let clt = 2.0 * 1.959964 * sd / (n as f64).sqrt();
        assert!((width / clt - 1.0).abs() < 0.15, "n = {n}: {width} vs {clt}");
        widths.push(width);
    }
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
}

#[test]
fn exhaustive_counts_for_eec_templates() {
    let templates = sentiprobe::config::builtin_templates("en").unwrap();
    let eec: Vec<Template> = templates.into_iter().filter(|t| t.source == TemplateSource::Eec).collect();
    let lex = sentiprobe::config::builtin_lexicon("en").unwrap();
    let pick = |k| lexica::select(&lex, k, "en");
    let fillers = SlotFillers::new()
        .with(Slot::State, pick(LexiconKind::StateWord))
        .with(Slot::Situation, pick(LexiconKind::SituationWord));
    let nats: Vec<String> = pick(LexiconKind::Nationality).into_iter().take(15).map(|e| e.surface).collect();
    let groups = lexica::gen_probes(&eec, &fillers, &nats, "[MASK]").unwrap();
    // one group per filler combination: 1 for slot-free templates, 20 per word slot
    let expected: usize = eec
        .iter()
        .map(|t| {
            t.slots()
                .iter()
                .filter(|s| **s != Slot::Nationality)
                .map(|_| 20)
                .product::<usize>()
        })
        .sum();
    assert_eq!(groups.len(), expected);
    assert!(groups.iter().all(|g| g.variants.len() == 15));
}
