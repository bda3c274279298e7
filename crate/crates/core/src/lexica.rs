//! Templates, lexicons, and the generators that turn them into classifier
//! training sentences and nationality minimal pairs.
//!
//! Slot markers are literal bracketed tokens (`[Noun]`, `[Adj]`,
//! `[Nationality]`, `[State]`, `[Situation]`). Substitution is plain string
//! replacement: no agreement, inflection or article repair is attempted, so
//! some rendered sentences are ungrammatical in gendered languages.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Noun,
    Adj,
    Nationality,
    State,
    Situation,
}

impl Slot {
    pub const ALL: [Slot; 5] = [
        Slot::Noun,
        Slot::Adj,
        Slot::Nationality,
        Slot::State,
        Slot::Situation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Noun => "Noun",
            Slot::Adj => "Adj",
            Slot::Nationality => "Nationality",
            Slot::State => "State",
            Slot::Situation => "Situation",
        }
    }

    pub fn marker(self) -> String {
        format!("[{}]", self.name())
    }

    fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateSource {
    Native,
    Eec,
    CorpusMined,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment<'a> {
    Literal(&'a str),
    Slot(Slot),
}

/// Split a pattern into literals and slots. A marker is `[` followed by one or
/// more ASCII letters and `]`; anything else in brackets (`[1]`, `[citation
/// needed]`) is literal text.
fn parse_pattern(pattern: &str) -> std::result::Result<Vec<Segment<'_>>, String> {
    let mut segments = Vec::new();
    let bytes = pattern.as_bytes();
    let mut lit_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_alphabetic() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b']' {
                let name = &pattern[i + 1..j];
                let slot = Slot::from_name(name)
                    .ok_or_else(|| format!("unknown slot marker [{name}]"))?;
                if lit_start < i {
                    segments.push(Segment::Literal(&pattern[lit_start..i]));
                }
                segments.push(Segment::Slot(slot));
                i = j + 1;
                lit_start = i;
                continue;
            }
        }
        i += 1;
    }
    if lit_start < pattern.len() {
        segments.push(Segment::Literal(&pattern[lit_start..]));
    }
    Ok(segments)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub language: String,
    pub pattern: String,
    pub source: TemplateSource,
}

impl Template {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        pattern: impl Into<String>,
        source: TemplateSource,
    ) -> Result<Self> {
        let template = Template {
            id: id.into(),
            language: language.into(),
            pattern: pattern.into(),
            source,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        let segments = parse_pattern(&self.pattern).map_err(|message| Error::InvalidTemplate {
            id: self.id.clone(),
            message,
        })?;
        if !segments.iter().any(|s| matches!(s, Segment::Slot(_))) {
            return Err(Error::InvalidTemplate {
                id: self.id.clone(),
                message: "pattern contains no slot marker".into(),
            });
        }
        Ok(())
    }

    /// Distinct slots in order of first appearance.
    pub fn slots(&self) -> Vec<Slot> {
        let mut seen = Vec::new();
        for seg in parse_pattern(&self.pattern).unwrap_or_default() {
            if let Segment::Slot(s) = seg {
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
        }
        seen
    }

    pub fn has_slot(&self, slot: Slot) -> bool {
        self.slots().contains(&slot)
    }
}

/// Replace every slot marker with its binding in a single left-to-right pass,
/// so bound surfaces are never themselves re-scanned for markers.
pub fn render(template: &Template, bindings: &BTreeMap<Slot, &str>) -> Result<String> {
    let segments = parse_pattern(&template.pattern).map_err(|message| Error::InvalidTemplate {
        id: template.id.clone(),
        message,
    })?;
    let mut out = String::with_capacity(template.pattern.len() + 16);
    for seg in segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Slot(slot) => {
                let value = bindings.get(&slot).ok_or_else(|| Error::MissingBinding {
                    template: template.id.clone(),
                    slot: slot.name().to_string(),
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LexiconKind {
    Noun,
    PolarAdjective,
    NeutralAdjective,
    Nationality,
    StateWord,
    SituationWord,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface: String,
    pub kind: LexiconKind,
    pub polarity: i8,
    pub language: String,
}

impl LexiconEntry {
    pub fn new(surface: &str, kind: LexiconKind, polarity: i8, language: &str) -> Result<Self> {
        let entry = LexiconEntry {
            surface: surface.to_string(),
            kind,
            polarity,
            language: language.to_string(),
        };
        entry.validate().map_err(Error::InvalidInput)?;
        Ok(entry)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.surface.trim().is_empty() {
            return Err("empty surface form".into());
        }
        if !(-1..=1).contains(&self.polarity) {
            return Err(format!("polarity {} outside {{-1, 0, 1}}", self.polarity));
        }
        match self.kind {
            LexiconKind::PolarAdjective if self.polarity == 0 => Err(format!(
                "polar-adjective `{}` must have polarity -1 or +1",
                self.surface
            )),
            LexiconKind::NeutralAdjective | LexiconKind::Nationality if self.polarity != 0 => {
                Err(format!(
                    "{:?} `{}` must have polarity 0, found {}",
                    self.kind, self.surface, self.polarity
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Line number (1-based) of the `index`-th element of a top-level JSON array.
fn element_line(src: &str, index: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut line = 1;
    let mut seen = 0usize;
    let mut expecting = false;
    for c in src.chars() {
        if c == '\n' {
            line += 1;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if depth == 1 && expecting && !c.is_whitespace() && c != ',' && c != ']' {
            if seen == index {
                return Some(line);
            }
            seen += 1;
            expecting = false;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => {
                depth += 1;
                if depth == 1 {
                    expecting = true;
                }
            }
            ']' | '}' => depth = depth.saturating_sub(1),
            ',' if depth == 1 => expecting = true,
            _ => {}
        }
    }
    None
}

fn read_json_array<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>)> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if src.trim().is_empty() {
        return Ok((src, Vec::new()));
    }
    let items = serde_json::from_str(&src).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((src, items))
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<LexiconEntry>> {
    let path = path.as_ref();
    let (src, entries): (_, Vec<LexiconEntry>) = read_json_array(path)?;
    if entries.is_empty() {
        log::warn!("{}: lexicon is empty", path.display());
        return Ok(entries);
    }
    for (index, entry) in entries.iter().enumerate() {
        if let Err(message) = entry.validate() {
            let line = element_line(&src, index).unwrap_or(0);
            return Err(Error::InvalidEntry {
                path: path.to_path_buf(),
                index,
                message: format!("line {line}: {message}"),
            });
        }
    }
    let mut counts: BTreeMap<LexiconKind, usize> = BTreeMap::new();
    for e in &entries {
        *counts.entry(e.kind).or_default() += 1;
    }
    log::info!("{}: {} entries {:?}", path.display(), entries.len(), counts);
    Ok(entries)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<Template>> {
    let path = path.as_ref();
    let (src, templates): (_, Vec<Template>) = read_json_array(path)?;
    for (index, t) in templates.iter().enumerate() {
        if let Err(e) = t.validate() {
            let line = element_line(&src, index).unwrap_or(0);
            return Err(Error::InvalidEntry {
                path: path.to_path_buf(),
                index,
                message: format!("line {line}: {e}"),
            });
        }
    }
    Ok(templates)
}

/// Entries of one kind and language, sorted by surface form.
pub fn select(entries: &[LexiconEntry], kind: LexiconKind, language: &str) -> Vec<LexiconEntry> {
    let mut out: Vec<_> = entries
        .iter()
        .filter(|e| e.kind == kind && e.language == language)
        .cloned()
        .collect();
    out.sort_by(|a, b| a.surface.cmp(&b.surface));
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub text: String,
    pub label: i8,
    pub template_id: String,
    pub adjective: String,
}

fn sorted_templates(templates: &[Template]) -> Vec<&Template> {
    let mut out: Vec<&Template> = templates.iter().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

fn sorted_entries(entries: &[LexiconEntry]) -> Vec<&LexiconEntry> {
    let mut out: Vec<&LexiconEntry> = entries.iter().collect();
    out.sort_by(|a, b| a.surface.cmp(&b.surface));
    out
}

/// Cross product of templates, nouns and polar adjectives, ordered by
/// template id, then noun, then adjective.
pub fn gen_training(
    templates: &[Template],
    nouns: &[LexiconEntry],
    adjectives: &[LexiconEntry],
) -> Result<Vec<TrainingInstance>> {
    if templates.is_empty() || nouns.is_empty() || adjectives.is_empty() {
        return Err(Error::invalid(
            "training generation needs at least one template, noun and adjective",
        ));
    }
    for t in templates {
        if !t.has_slot(Slot::Noun) || !t.has_slot(Slot::Adj) {
            return Err(Error::InvalidTemplate {
                id: t.id.clone(),
                message: "training templates need [Noun] and [Adj] slots".into(),
            });
        }
    }
    if let Some(a) = adjectives.iter().find(|a| a.polarity == 0) {
        return Err(Error::invalid(format!(
            "training adjective `{}` has no polarity",
            a.surface
        )));
    }

    let mut out = Vec::with_capacity(templates.len() * nouns.len() * adjectives.len());
    for t in sorted_templates(templates) {
        for noun in sorted_entries(nouns) {
            for adj in sorted_entries(adjectives) {
                let bindings = BTreeMap::from([
                    (Slot::Noun, noun.surface.as_str()),
                    (Slot::Adj, adj.surface.as_str()),
                ]);
                out.push(TrainingInstance {
                    text: render(t, &bindings)?,
                    label: adj.polarity,
                    template_id: t.id.clone(),
                    adjective: adj.surface.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeVariant {
    pub nationality: String,
    pub text: String,
}

/// One template/filler combination rendered once with the mask token
/// (`baseline_text`) and once per nationality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeGroup {
    pub template_id: String,
    /// Filler(s) bound to the non-nationality slots, joined with `+`; empty
    /// for templates whose only slot is the nationality.
    pub adjective: String,
    pub adjective_polarity: i8,
    pub baseline_text: String,
    pub variants: Vec<ProbeVariant>,
}

/// Word lists for the non-nationality slots of probe templates.
#[derive(Clone, Debug, Default)]
pub struct SlotFillers {
    fillers: BTreeMap<Slot, Vec<LexiconEntry>>,
}

impl SlotFillers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: Slot, entries: Vec<LexiconEntry>) -> Self {
        self.fillers.insert(slot, entries);
        self
    }

    pub fn get(&self, slot: Slot) -> &[LexiconEntry] {
        self.fillers.get(&slot).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of filler combinations a template expands to.
    pub fn combinations(&self, template: &Template) -> usize {
        template
            .slots()
            .into_iter()
            .filter(|s| *s != Slot::Nationality)
            .map(|s| self.get(s).len())
            .product()
    }
}

/// All picks of one element per list, last list varying fastest. An empty
/// list of lists yields one empty pick.
fn cartesian<'a, T>(lists: &[Vec<&'a T>]) -> Vec<Vec<&'a T>> {
    let mut out: Vec<Vec<&T>> = vec![Vec::new()];
    for list in lists {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                list.iter().map(move |item| {
                    let mut next = prefix.clone();
                    next.push(*item);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn gen_probes(
    templates: &[Template],
    fillers: &SlotFillers,
    nationalities: &[String],
    mask_token: &str,
) -> Result<Vec<ProbeGroup>> {
    if templates.is_empty() {
        return Err(Error::invalid("no probe templates"));
    }
    if nationalities.is_empty() {
        return Err(Error::invalid("nationality list is empty"));
    }
    for t in templates {
        if !t.has_slot(Slot::Nationality) {
            return Err(Error::InvalidTemplate {
                id: t.id.clone(),
                message: "probe templates need a [Nationality] slot".into(),
            });
        }
        for slot in t.slots() {
            if slot != Slot::Nationality && fillers.get(slot).is_empty() {
                return Err(Error::invalid(format!(
                    "template `{}` needs [{}] fillers but none were given",
                    t.id, slot
                )));
            }
        }
    }

    let mut groups = Vec::new();
    for t in sorted_templates(templates) {
        let fill_slots: Vec<Slot> = t
            .slots()
            .into_iter()
            .filter(|s| *s != Slot::Nationality)
            .collect();
        let lists: Vec<Vec<&LexiconEntry>> = fill_slots
            .iter()
            .map(|s| sorted_entries(fillers.get(*s)))
            .collect();

        for chosen in cartesian(&lists) {
            let mut bindings: BTreeMap<Slot, &str> = fill_slots
                .iter()
                .zip(&chosen)
                .map(|(s, e)| (*s, e.surface.as_str()))
                .collect();
            let adjective = chosen
                .iter()
                .map(|e| e.surface.as_str())
                .collect::<Vec<_>>()
                .join("+");
            let polarity_sum: i32 = chosen.iter().map(|e| e.polarity as i32).sum();

            bindings.insert(Slot::Nationality, mask_token);
            let baseline_text = render(t, &bindings)?;
            let mut variants = Vec::with_capacity(nationalities.len());
            for n in nationalities {
                bindings.insert(Slot::Nationality, n.as_str());
                variants.push(ProbeVariant {
                    nationality: n.clone(),
                    text: render(t, &bindings)?,
                });
            }
            groups.push(ProbeGroup {
                template_id: t.id.clone(),
                adjective,
                adjective_polarity: polarity_sum.signum() as i8,
                baseline_text,
                variants,
            });
        }
    }
    Ok(groups)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MinedTemplates {
    pub templates: Vec<Template>,
    /// Ids of templates whose source sentence mentioned more than one term;
    /// only the first mention was turned into a slot.
    pub flagged: Vec<String>,
    /// Sentences that matched but could not form a valid template.
    pub rejected: usize,
}

/// Turn corpus sentences into nationality templates by replacing the first
/// word-boundary mention of any term with `[Nationality]`.
pub fn mine_corpus_templates<I, S>(sentences: I, terms: &[String], language: &str) -> MinedTemplates
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = MinedTemplates::default();
    let mut seen_patterns = HashSet::new();
    let marker = Slot::Nationality.marker();
    for sentence in sentences {
        let sentence = sentence.as_ref();
        let mut spans: BTreeSet<(usize, std::cmp::Reverse<usize>)> = BTreeSet::new();
        for term in terms {
            for (s, e) in text::word_matches(sentence, term) {
                spans.insert((s, std::cmp::Reverse(e)));
            }
        }
        // earliest start, longest term on ties
        let Some(&(start, std::cmp::Reverse(end))) = spans.iter().next() else {
            continue;
        };
        let pattern = format!("{}{}{}", &sentence[..start], marker, &sentence[end..]);
        if !seen_patterns.insert(pattern.clone()) {
            continue;
        }
        let id = format!("mined-{}", &text::content_key(&pattern)[..12]);
        match Template::new(id.clone(), language, pattern, TemplateSource::CorpusMined) {
            Ok(t) => {
                if spans.len() > 1 {
                    out.flagged.push(id);
                }
                out.templates.push(t);
            }
            Err(_) => out.rejected += 1,
        }
    }
    out
}
