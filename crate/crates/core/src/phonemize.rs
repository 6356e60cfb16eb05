//! Rule-driven grapheme-to-phoneme conversion and IPA segmentation.
//!
//! Conversion scans NFC-normalised text left to right. At each position the first rule
//! (by `order`) whose source matches and whose contexts hold is applied and its source
//! consumed. Contexts are literal strings checked against the input, where `#` stands
//! for a word boundary (whitespace or either end of the text). Whitespace is copied
//! through unchanged.
//!
//! Segmentation splits an IPA string into inventory units by greedy longest match. A unit
//! never ends in front of a combining mark, so diacritics stay with their base.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::data::LanguageId;
use crate::error::{Error, Result};

const WORD_BOUNDARY: char = '#';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewriteRule {
    pub order: i64,
    pub source: String,
    pub target: String,
    pub left_context: Option<String>,
    pub right_context: Option<String>,
}

/// Rules of one language, sorted by `order`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleTable {
    language: LanguageId,
    rules: Vec<CompiledRule>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct CompiledRule {
    rule: RewriteRule,
    source: Vec<char>,
    left: Vec<char>,
    right: Vec<char>,
}

impl RuleTable {
    /// Builds a table, normalising every field to NFC and sorting by order.
    pub fn new(language: LanguageId, rules: Vec<RewriteRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut compiled = Vec::with_capacity(rules.len());
        for mut rule in rules {
            rule.source = nfc(&rule.source);
            rule.target = nfc(&rule.target);
            rule.left_context = rule
                .left_context
                .as_deref()
                .map(nfc)
                .filter(|c| !c.is_empty());
            rule.right_context = rule
                .right_context
                .as_deref()
                .map(nfc)
                .filter(|c| !c.is_empty());
            validate_rule(&rule)?;
            if !seen.insert(rule.order) {
                return Err(Error::Invalid(format!(
                    "duplicate rule order {}",
                    rule.order
                )));
            }
            compiled.push(CompiledRule {
                source: rule.source.chars().collect(),
                left: rule.left_context.as_deref().unwrap_or("").chars().collect(),
                right: rule
                    .right_context
                    .as_deref()
                    .unwrap_or("")
                    .chars()
                    .collect(),
                rule,
            });
        }
        compiled.sort_by_key(|c| c.rule.order);
        Ok(RuleTable {
            language,
            rules: compiled,
        })
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn rules(&self) -> impl ExactSizeIterator<Item = &RewriteRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

fn validate_rule(rule: &RewriteRule) -> Result<()> {
    if rule.source.is_empty() {
        return Err(Error::Invalid("rule source is empty".into()));
    }
    if rule.source.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!(
            "rule source {:?} contains whitespace",
            rule.source
        )));
    }
    Ok(())
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Phoneme units of one language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    units: BTreeSet<String>,
    longest: usize,
}

impl PhonemeInventory {
    pub fn new<I, S>(units: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for unit in units {
            let unit = nfc(unit.as_ref());
            if unit.is_empty() {
                return Err(Error::Invalid("inventory unit is empty".into()));
            }
            if unit.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "inventory unit {unit:?} contains whitespace"
                )));
            }
            set.insert(unit);
        }
        if set.is_empty() {
            return Err(Error::Invalid("inventory is empty".into()));
        }
        let longest = set.iter().map(|u| u.chars().count()).max().unwrap_or(0);
        Ok(PhonemeInventory {
            units: set,
            longest,
        })
    }

    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(String::as_str)
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.units.contains(unit)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Reads a rule table. The language is the file-name stem before the first `.`.
pub fn load_rules(path: &Path) -> Result<RuleTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let language = LanguageId::from_path(path)?;
    parse_rules(&text, language, path)
}

/// Parses `order<TAB>source<TAB>target<TAB>left_context<TAB>right_context` lines.
///
/// Blank lines and lines starting with `#` are skipped, as is a leading header line whose
/// first field is `order`. Trailing empty context columns may be omitted.
pub fn parse_rules(text: &str, language: LanguageId, path: &Path) -> Result<RuleTable> {
    let mut rules = Vec::new();
    let mut orders = HashSet::new();
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if std::mem::take(&mut first) && fields[0].trim().eq_ignore_ascii_case("order") {
            continue;
        }
        if !(3..=5).contains(&fields.len()) {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 to 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let order: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid order {:?}", fields[0])))?;
        if !orders.insert(order) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate order {order}"),
            ));
        }
        let context = |k: usize| {
            fields
                .get(k)
                .map(|s| s.to_string())
                .filter(|s| !s.is_empty())
        };
        let rule = RewriteRule {
            order,
            source: nfc(fields[1]),
            target: nfc(fields[2]),
            left_context: context(3),
            right_context: context(4),
        };
        validate_rule(&rule).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        rules.push(rule);
    }
    RuleTable::new(language, rules)
}

/// Reads an inventory: one unit per line, blank lines ignored.
pub fn load_inventory(path: &Path) -> Result<PhonemeInventory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_inventory(&text).map_err(|e| match e {
        Error::Invalid(msg) => Error::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_inventory(text: &str) -> Result<PhonemeInventory> {
    PhonemeInventory::new(text.lines().map(|l| l.trim()).filter(|l| !l.is_empty()))
}

/// Checks that every rule target segments into inventory units.
pub fn cross_validate(table: &RuleTable, inventory: &PhonemeInventory) -> Result<()> {
    for rule in table.rules() {
        segment(&rule.target, inventory, false).map_err(|e| {
            Error::Invalid(format!(
                "rule {} target {:?} is not covered by the inventory: {e}",
                rule.order, rule.target
            ))
        })?;
    }
    Ok(())
}

/// Converts text to IPA. Without `passthrough`, a character no rule consumes is an error.
pub fn g2p(text: &str, table: &RuleTable, passthrough: bool) -> Result<String> {
    let chars: Vec<char> = text.nfc().collect();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            out.push(c);
            pos += 1;
            continue;
        }
        match table.rules.iter().find(|r| rule_matches(r, &chars, pos)) {
            Some(r) => {
                out.push_str(&r.rule.target);
                pos += r.source.len();
            }
            None if passthrough => {
                out.push(c);
                pos += 1;
            }
            None => {
                return Err(Error::Conversion {
                    position: pos,
                    found: c,
                })
            }
        }
    }
    Ok(out)
}

fn rule_matches(rule: &CompiledRule, text: &[char], pos: usize) -> bool {
    let end = pos + rule.source.len();
    end <= text.len()
        && text[pos..end] == rule.source[..]
        && left_matches(&rule.left, text, pos)
        && right_matches(&rule.right, text, end)
}

fn left_matches(pattern: &[char], text: &[char], pos: usize) -> bool {
    let mut j = pos;
    for &p in pattern.iter().rev() {
        if p == WORD_BOUNDARY {
            if j == 0 {
                continue;
            }
            if !text[j - 1].is_whitespace() {
                return false;
            }
        } else if j == 0 || text[j - 1] != p {
            return false;
        }
        j -= 1;
    }
    true
}

fn right_matches(pattern: &[char], text: &[char], end: usize) -> bool {
    let mut j = end;
    for &p in pattern {
        if p == WORD_BOUNDARY {
            if j == text.len() {
                continue;
            }
            if !text[j].is_whitespace() {
                return false;
            }
        } else if j == text.len() || text[j] != p {
            return false;
        }
        j += 1;
    }
    true
}

/// Splits IPA into inventory units by greedy longest match.
///
/// With `passthrough`, an uncovered character is emitted as its own unit together with
/// any combining marks that follow it.
pub fn segment(ipa: &str, inventory: &PhonemeInventory, passthrough: bool) -> Result<Vec<String>> {
    let chars: Vec<char> = ipa.nfc().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    let mut candidate = String::new();
    while pos < chars.len() {
        let max = inventory.longest.min(chars.len() - pos);
        let mut matched = None;
        for len in (1..=max).rev() {
            let end = pos + len;
            if end < chars.len() && is_combining_mark(chars[end]) {
                continue;
            }
            candidate.clear();
            candidate.extend(&chars[pos..end]);
            if inventory.contains(&candidate) {
                matched = Some(len);
                break;
            }
        }
        let len = match matched {
            Some(len) => len,
            None if passthrough => {
                1 + chars[pos + 1..]
                    .iter()
                    .take_while(|&&c| is_combining_mark(c))
                    .count()
            }
            None => {
                return Err(Error::Segmentation {
                    offset: pos,
                    found: chars[pos..].iter().take(inventory.longest.max(1)).collect(),
                })
            }
        };
        out.push(chars[pos..pos + len].iter().collect());
        pos += len;
    }
    Ok(out)
}

/// Joins phonemes with single spaces.
pub fn space_phonemes<S: AsRef<str>>(phonemes: &[S]) -> Result<String> {
    if let Some(i) = phonemes.iter().position(|p| p.as_ref().is_empty()) {
        return Err(Error::Invalid(format!("phoneme {i} is empty")));
    }
    Ok(phonemes
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" "))
}

/// Converts one line of text to space-separated phonemes: g2p, then segmentation of each
/// whitespace-delimited word, then spacing.
pub fn phonemize_line(
    text: &str,
    table: &RuleTable,
    inventory: &PhonemeInventory,
    passthrough: bool,
) -> Result<String> {
    let ipa = g2p(text, table, passthrough)?;
    let mut phonemes = Vec::new();
    for word in ipa.split_whitespace() {
        phonemes.extend(segment(word, inventory, passthrough)?);
    }
    space_phonemes(&phonemes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lang(s: &str) -> LanguageId {
        LanguageId::new(s).unwrap()
    }

    fn rules(text: &str) -> RuleTable {
        parse_rules(text, lang("toy"), Path::new("toy.tsv")).unwrap()
    }

    fn inv(units: &[&str]) -> PhonemeInventory {
        PhonemeInventory::new(units).unwrap()
    }

    #[test]
    fn parse_two_rules_in_order() {
        let t =
            rules("order\tsource\ttarget\tleft_context\tright_context\n20\tb\tp\t\t\n10\ta\tɑ\n");
        let got: Vec<_> = t
            .rules()
            .map(|r| (r.order, r.source.as_str(), r.target.as_str()))
            .collect();
        assert_eq!(got, vec![(10, "a", "ɑ"), (20, "b", "p")]);
        assert_eq!(t.language().as_str(), "toy");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_rules(
            "1\ta\tb\n# note\n1\tc\td\n",
            lang("toy"),
            Path::new("t.tsv"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_rules("1\t\tb\n", lang("toy"), Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_rules("x\ta\tb\n", lang("toy"), Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_rules("1\ta\n", lang("toy"), Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn g2p_single_rule_and_empty() {
        let t = rules("1\tph\tf\n2\ta\ta\n3\ts\ts\n4\te\te\n");
        assert_eq!(g2p("phase", &t, false).unwrap(), "fase");
        assert_eq!(g2p("", &t, false).unwrap(), "");
    }

    #[test]
    fn g2p_context_rules_apply_in_order() {
        let t = rules("1\tc\ts\t\te\n2\tc\tk\n3\te\te\n4\ta\ta\n");
        // c before e takes rule 1, c before a falls through to rule 2.
        assert_eq!(g2p("ce ca", &t, false).unwrap(), "se ka");
    }

    #[test]
    fn g2p_word_boundaries() {
        // Final s voices after a vowel at the end of a word; elsewhere stays s.
        let t = rules("1\ts\tz\ta\t#\n2\ts\ts\n3\ta\ta\n4\tk\tk\n");
        assert_eq!(g2p("kas kasa as", &t, false).unwrap(), "kaz kasa az");
        let t = rules("1\tk\tg\t#\t\n2\tk\tk\n3\ta\ta\n");
        assert_eq!(g2p("kak akak", &t, false).unwrap(), "gak akak");
    }

    #[test]
    fn g2p_unmatched_characters() {
        let t = rules("1\ta\ta\n");
        assert!(matches!(
            g2p("aab", &t, false),
            Err(Error::Conversion {
                position: 2,
                found: 'b'
            })
        ));
        assert_eq!(g2p("aab", &t, true).unwrap(), "aab");
    }

    #[test]
    fn g2p_normalises_input() {
        let t = rules("1\t\u{e9}\te\n");
        assert_eq!(g2p("e\u{301}", &t, false).unwrap(), "e");
    }

    #[test]
    fn segment_longest_match() {
        let i = inv(&["t", "ʃ", "tʃ", "a"]);
        assert_eq!(segment("tʃa", &i, false).unwrap(), vec!["tʃ", "a"]);
        assert_eq!(
            segment("aaa", &inv(&["a"]), false).unwrap(),
            vec!["a", "a", "a"]
        );
        assert!(segment("", &i, false).unwrap().is_empty());
    }

    #[test]
    fn segment_keeps_diacritics_with_base() {
        // t̪ has no precomposed form, so NFC keeps the combining bridge.
        let i = inv(&["t", "t\u{32a}", "a"]);
        assert_eq!(
            segment("t\u{32a}at", &i, false).unwrap(),
            vec!["t\u{32a}", "a", "t"]
        );
        let only_base = inv(&["t", "a"]);
        assert!(matches!(
            segment("t\u{32a}a", &only_base, false),
            Err(Error::Segmentation { offset: 0, .. })
        ));
        assert_eq!(
            segment("t\u{32a}a", &only_base, true).unwrap(),
            vec!["t\u{32a}", "a"]
        );
    }

    #[test]
    fn segment_reports_offset() {
        let i = inv(&["a", "b"]);
        assert!(matches!(
            segment("abxa", &i, false),
            Err(Error::Segmentation { offset: 2, .. })
        ));
        assert_eq!(segment("abxa", &i, true).unwrap(), vec!["a", "b", "x", "a"]);
    }

    #[test]
    fn space_phonemes_examples() {
        assert_eq!(space_phonemes(&["tʃ", "a"]).unwrap(), "tʃ a");
        assert_eq!(space_phonemes(&["ŋ"]).unwrap(), "ŋ");
        assert!(space_phonemes(&["a", ""]).is_err());
    }

    #[test]
    fn inventory_validation_and_cross_check() {
        assert!(PhonemeInventory::new(Vec::<String>::new()).is_err());
        assert!(PhonemeInventory::new(["a", ""]).is_err());
        assert_eq!(parse_inventory("a\n\ntʃ\n").unwrap().len(), 2);
        let t = rules("1\tch\ttʃ\n2\ta\ta\n");
        assert!(cross_validate(&t, &inv(&["tʃ", "a"])).is_ok());
        assert!(cross_validate(&t, &inv(&["t", "a"])).is_err());
    }

    #[test]
    fn pipeline_counts_spaces() {
        let t = rules("1\tch\ttʃ\n2\ta\ta\n3\tn\tn\n");
        let i = inv(&["tʃ", "a", "n"]);
        let out = phonemize_line("chan  an", &t, &i, false).unwrap();
        assert_eq!(out, "tʃ a n a n");
        assert_eq!(out.matches(' ').count(), 4);
        assert_eq!(phonemize_line("", &t, &i, false).unwrap(), "");
    }

    fn units() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["p", "t", "k", "tʃ", "ts", "a", "aː", "i", "n̪", "ʃ"]),
            0..30,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn segment_is_lossless_and_longest(seq in units()) {
            let inventory = inv(&["p", "t", "k", "tʃ", "ts", "a", "aː", "i", "n̪", "ʃ", "s"]);
            let text: String = seq.concat();
            let parts = segment(&text, &inventory, false).unwrap();
            prop_assert_eq!(parts.concat(), text.clone());
            // Re-scan: no longer unit matches at any emitted position.
            let chars: Vec<char> = text.chars().collect();
            let mut pos = 0;
            for part in &parts {
                let len = part.chars().count();
                for longer in len + 1..=chars.len() - pos {
                    let cand: String = chars[pos..pos + longer].iter().collect();
                    let splits_mark = pos + longer < chars.len() && is_combining_mark(chars[pos + longer]);
                    prop_assert!(splits_mark || !inventory.contains(&cand));
                }
                pos += len;
            }
            let spaced = space_phonemes(&parts).unwrap();
            prop_assert!(!spaced.contains("  "));
            let again: Vec<String> = spaced
                .split_whitespace()
                .flat_map(|tok| segment(tok, &inventory, false).unwrap())
                .collect();
            prop_assert_eq!(space_phonemes(&again).unwrap(), spaced);
        }
    }
}
