//! Corpus ingestion: tokenization, vocabularies, the lexicon-filtered BoW
//! vocabulary, BoW target distributions, and padded mini-batches.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: &[&str] = &["<pad>", "<unk>", "<s>", "</s>"];

/// Lowercase, whitespace-split tokens. The corpora this targets are
/// pre-tokenized, so no further normalization happens here.
pub fn tokenize(raw_text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = raw_text.split_whitespace().map(|t| t.to_lowercase()).collect();
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(tokens)
}

/// Inverse of [`tokenize`] up to the one-time casing/whitespace
/// normalization: joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ")
}

/// Token ↔ id maps with fixed reserved ids for pad/unk/sos/eos.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from tokenized sentences. Tokens with frequency ≥ `min_count`
    /// are kept, ordered by descending frequency then lexicographically;
    /// reserved ids come first.
    pub fn build<'a, I>(sentences: I, min_count: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        assert!(min_count >= 1, "min_count must be >= 1");
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for sent in sentences {
            any = true;
            for tok in sent {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    /// Reconstruct from an ordered token list (checkpoint loading).
    pub fn from_tokens(id_to_token: Vec<String>) -> Result<Vocabulary> {
        let reserved_ok = id_to_token.len() >= RESERVED.len()
            && id_to_token[..RESERVED.len()].iter().map(|s| s.as_str()).eq(RESERVED.iter().copied());
        if !reserved_ok {
            return Err(Error::Invalid("token list lacks reserved prefix".into()));
        }
        let token_to_id: HashMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Invalid("duplicate token in vocabulary".into()));
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token; unknown tokens map to [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Non-reserved tokens in id order.
    pub fn content_tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[RESERVED.len()..].iter().map(|s| s.as_str())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    /// FNV-1a over the ordered token list; checkpoints store this to
    /// reject loads against a different vocabulary.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.id_to_token {
            for b in t.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// A word set loaded from a one-word-per-line file; `#` lines are comments.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    words: HashSet<String>,
}

impl Lexicon {
    pub fn from_reader(reader: impl BufRead) -> std::io::Result<Lexicon> {
        let mut words = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            words.insert(line.to_lowercase());
        }
        Ok(Lexicon { words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Lexicon> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Lexicon {
        Lexicon {
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    /// Bundled English stopword list.
    pub fn bundled_stopwords() -> Lexicon {
        Lexicon::from_reader(include_str!("../assets/stopwords.txt").as_bytes()).unwrap()
    }

    /// Bundled positive + negative opinion words, merged.
    pub fn bundled_sentiment() -> Lexicon {
        let pos = Lexicon::from_reader(include_str!("../assets/positive-words.txt").as_bytes()).unwrap();
        let neg = Lexicon::from_reader(include_str!("../assets/negative-words.txt").as_bytes()).unwrap();
        pos.union(neg)
    }

    /// Bundled positive opinion words only.
    pub fn bundled_positive() -> Lexicon {
        Lexicon::from_reader(include_str!("../assets/positive-words.txt").as_bytes()).unwrap()
    }

    /// Bundled negative opinion words only.
    pub fn bundled_negative() -> Lexicon {
        Lexicon::from_reader(include_str!("../assets/negative-words.txt").as_bytes()).unwrap()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn union(mut self, other: Lexicon) -> Lexicon {
        self.words.extend(other.words);
        self
    }
}

/// Which filters the BoW vocabulary applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BowFilterMode {
    Full,
    NoSentiment,
    NoStopwords,
    #[default]
    NoStopwordsNoSentiment,
}

impl BowFilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BowFilterMode::Full => "full",
            BowFilterMode::NoSentiment => "no-sentiment",
            BowFilterMode::NoStopwords => "no-stopwords",
            BowFilterMode::NoStopwordsNoSentiment => "no-stopwords-no-sentiment",
        }
    }
}

impl std::str::FromStr for BowFilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BowFilterMode::Full),
            "no-sentiment" => Ok(BowFilterMode::NoSentiment),
            "no-stopwords" => Ok(BowFilterMode::NoStopwords),
            "no-stopwords-no-sentiment" => Ok(BowFilterMode::NoStopwordsNoSentiment),
            other => Err(Error::Config(format!("unknown bow filter mode `{other}`"))),
        }
    }
}

impl fmt::Display for BowFilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Content-word subset of the vocabulary used as BoW prediction support.
#[derive(Clone, Debug)]
pub struct BowVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// vocab id → bow index, for fast target building.
    by_vocab_id: Vec<Option<usize>>,
    mode: BowFilterMode,
}

impl BowVocab {
    pub fn build(
        vocab: &Vocabulary,
        stopwords: &Lexicon,
        sentiment: &Lexicon,
        mode: BowFilterMode,
    ) -> Result<BowVocab> {
        let drop_stop = matches!(mode, BowFilterMode::NoStopwords | BowFilterMode::NoStopwordsNoSentiment);
        let drop_sent = matches!(mode, BowFilterMode::NoSentiment | BowFilterMode::NoStopwordsNoSentiment);
        let mut words = Vec::new();
        let mut by_vocab_id = vec![None; vocab.len()];
        for (id, tok) in vocab.tokens().iter().enumerate().skip(RESERVED.len()) {
            if drop_stop && stopwords.contains(tok) {
                continue;
            }
            if drop_sent && sentiment.contains(tok) {
                continue;
            }
            by_vocab_id[id] = Some(words.len());
            words.push(tok.clone());
        }
        if words.is_empty() {
            return Err(Error::EmptyBowVocab {
                mode: mode.to_string(),
            });
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(BowVocab {
            words,
            index,
            by_vocab_id,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn mode(&self) -> BowFilterMode {
        self.mode
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn index_of_vocab_id(&self, id: u32) -> Option<usize> {
        self.by_vocab_id.get(id as usize).copied().flatten()
    }
}

/// A normalized sparse distribution over a declared support; `entries`
/// are (index, probability) pairs sorted by index. May be empty
/// (degenerate), which callers flag through the content mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDistribution {
    support: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseDistribution {
    pub fn empty(support: usize) -> SparseDistribution {
        SparseDistribution {
            support,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(support: usize, mut entries: Vec<(usize, f64)>) -> SparseDistribution {
        entries.sort_by_key(|&(i, _)| i);
        let d = SparseDistribution { support, entries };
        debug_assert!(
            d.is_empty() || (d.sum() - 1.0).abs() < 1e-9,
            "unnormalized distribution"
        );
        d
    }

    pub fn one_hot(index: usize, support: usize) -> SparseDistribution {
        SparseDistribution {
            support,
            entries: vec![(index, 1.0)],
        }
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.support];
        for &(i, p) in &self.entries {
            v[i] = p;
        }
        v
    }
}

/// BoW target: occurrence counts of BoW-vocabulary words in the sentence,
/// renormalized over those occurrences so the target is a proper
/// distribution. Sentences with no content word get an empty target.
pub fn bow_target(token_ids: &[u32], bow: &BowVocab) -> SparseDistribution {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut total = 0usize;
    for &id in token_ids {
        if let Some(ix) = bow.index_of_vocab_id(id) {
            *counts.entry(ix).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return SparseDistribution::empty(bow.len());
    }
    let entries = counts
        .into_iter()
        .map(|(i, c)| (i, c as f64 / total as f64))
        .collect();
    SparseDistribution::from_entries(bow.len(), entries)
}

/// One labeled training sentence. `tokens` ends with the sentence-end id.
#[derive(Clone, Debug)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub label: u8,
    pub raw_text: String,
}

impl Sentence {
    /// Length including the sentence-end marker.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token ids without the trailing end marker.
    pub fn words(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

/// Read `label<TAB>text` lines. Malformed labels are an error; blank
/// lines and empty sentences are skipped with a warning.
pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<(u8, String)>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            log::warn!("{}: skipping blank line {}", path.display(), i + 1);
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Corpus {
            line: i + 1,
            msg: "expected `label<TAB>text`".into(),
        })?;
        let label: u8 = parse_label(label).ok_or_else(|| Error::Corpus {
            line: i + 1,
            msg: format!("label must be 0 or 1, got `{label}`"),
        })?;
        if text.trim().is_empty() {
            log::warn!("{}: skipping empty sentence on line {}", path.display(), i + 1);
            continue;
        }
        out.push((label, text.to_string()));
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

/// Read a sentence file plus a parallel label file (one 0/1 per line).
pub fn read_parallel(
    text_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<Vec<(u8, String)>> {
    let tp = text_path.as_ref();
    let lp = label_path.as_ref();
    let text = std::fs::read_to_string(tp).map_err(|e| Error::io(tp, e))?;
    let labels = std::fs::read_to_string(lp).map_err(|e| Error::io(lp, e))?;
    let tl: Vec<&str> = text.lines().collect();
    let ll: Vec<&str> = labels.lines().collect();
    if tl.len() != ll.len() {
        return Err(Error::Invalid(format!(
            "text has {} lines but labels has {}",
            tl.len(),
            ll.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (text, label)) in tl.iter().zip(&ll).enumerate() {
        if text.trim().is_empty() {
            log::warn!("{}: skipping empty sentence on line {}", tp.display(), i + 1);
            continue;
        }
        let label = parse_label(label).ok_or_else(|| Error::Corpus {
            line: i + 1,
            msg: format!("label must be 0 or 1, got `{label}`"),
        })?;
        out.push((label, text.to_string()));
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

fn parse_label(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Tokenize raw (label, text) pairs. Lines that tokenize to nothing are
/// skipped with a warning.
pub fn tokenize_pairs(pairs: &[(u8, String)]) -> Vec<(u8, Vec<String>, String)> {
    let mut out = Vec::with_capacity(pairs.len());
    for (label, text) in pairs {
        match tokenize(text) {
            Ok(tokens) => out.push((*label, tokens, text.clone())),
            Err(_) => log::warn!("skipping empty sentence: {text:?}"),
        }
    }
    out
}

/// Encode tokenized pairs against a vocabulary, appending the end marker
/// and truncating to `max_len` total tokens.
pub fn encode_sentences(
    items: &[(u8, Vec<String>, String)],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<Sentence> {
    assert!(max_len >= 2, "max_len must fit one word plus the end marker");
    items
        .iter()
        .map(|(label, tokens, raw)| {
            let keep = tokens.len().min(max_len - 1);
            if keep < tokens.len() {
                log::warn!("truncating sentence to {} words: {raw:?}", max_len - 1);
            }
            let mut ids = vocab.encode(&tokens[..keep]);
            ids.push(EOS);
            Sentence {
                tokens: ids,
                label: *label,
                raw_text: raw.clone(),
            }
        })
        .collect()
}

/// Padded mini-batch. `tokens[i][j]` is the pad id for all `j >= lengths[i]`;
/// `content_mask[i]` is false iff the BoW target of sentence `i` is empty.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tokens: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<u8>,
    pub bow_targets: Vec<SparseDistribution>,
    pub content_mask: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unpadded token ids of sentence `i`.
    pub fn sentence_tokens(&self, i: usize) -> &[u32] {
        &self.tokens[i][..self.lengths[i]]
    }

    fn from_sentences(sents: &[&Sentence], bow: &BowVocab) -> Batch {
        let max_len = sents.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(sents.len());
        let mut lengths = Vec::with_capacity(sents.len());
        let mut labels = Vec::with_capacity(sents.len());
        let mut bow_targets = Vec::with_capacity(sents.len());
        let mut content_mask = Vec::with_capacity(sents.len());
        for s in sents {
            let mut row = s.tokens.clone();
            row.resize(max_len, PAD);
            tokens.push(row);
            lengths.push(s.len());
            labels.push(s.label);
            let t = bow_target(&s.tokens, bow);
            content_mask.push(!t.is_empty());
            bow_targets.push(t);
        }
        Batch {
            tokens,
            lengths,
            labels,
            bow_targets,
            content_mask,
        }
    }
}

/// Deterministically shuffled mini-batches; every sentence appears exactly
/// once per pass, the final batch may be short.
pub fn batch_iter<'a>(
    sentences: &'a [Sentence],
    bow: &'a BowVocab,
    batch_size: usize,
    seed: u64,
) -> impl Iterator<Item = Batch> + 'a {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    BatchIter {
        sentences,
        bow,
        order,
        batch_size,
        pos: 0,
    }
}

struct BatchIter<'a> {
    sentences: &'a [Sentence],
    bow: &'a BowVocab,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk: Vec<&Sentence> = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.sentences[i])
            .collect();
        self.pos = end;
        Some(Batch::from_sentences(&chunk, self.bow))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_normalizes_case_and_whitespace() {
        assert_eq!(tokenize("The Food is GOOD").unwrap(), toks(&["the", "food", "is", "good"]));
        assert_eq!(tokenize("great deal").unwrap(), toks(&["great", "deal"]));
        assert_eq!(tokenize("  a   b ").unwrap(), toks(&["a", "b"]));
    }

    #[test]
    fn tokenize_empty_line_errors() {
        assert!(matches!(tokenize("   "), Err(Error::EmptySentence)));
    }

    #[test]
    fn detokenize_round_trips() {
        let t = tokenize("The Food  is GOOD").unwrap();
        let s = detokenize(&t);
        assert_eq!(s, "the food is good");
        assert_eq!(tokenize(&s).unwrap(), t);
    }

    #[test]
    fn vocab_includes_all_with_min_count_one() {
        let sents = [toks(&["a", "b"]), toks(&["a", "c"])];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap();
        assert_eq!(v.len(), RESERVED.len() + 3);
        assert!(v.contains("a") && v.contains("b") && v.contains("c"));
        // a has frequency 2 and sorts first after the reserved block
        assert_eq!(v.id("a"), RESERVED.len() as u32);
    }

    #[test]
    fn vocab_threshold_maps_rare_to_unk() {
        let sents = [toks(&["a", "b"]), toks(&["a", "c"])];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 2).unwrap();
        assert_eq!(v.len(), RESERVED.len() + 1);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.id("a"), RESERVED.len() as u32);
    }

    #[test]
    fn vocab_empty_corpus_errors() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(matches!(
            Vocabulary::build(empty.iter().map(|s| s.as_slice()), 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn vocab_deterministic_ordering() {
        let sents = [toks(&["z", "m", "z", "a", "m", "z"])];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap();
        // z(3), m(2), a(1)
        assert_eq!(v.tokens()[RESERVED.len()..], ["z", "m", "a"]);
    }

    #[test]
    fn vocab_hash_changes_with_content() {
        let s1 = [toks(&["a", "b"])];
        let s2 = [toks(&["a", "c"])];
        let v1 = Vocabulary::build(s1.iter().map(|s| s.as_slice()), 1).unwrap();
        let v2 = Vocabulary::build(s2.iter().map(|s| s.as_slice()), 1).unwrap();
        assert_ne!(v1.hash(), v2.hash());
        assert_eq!(v1.hash(), v1.clone().hash());
    }

    fn tiny_vocab() -> Vocabulary {
        let sents = [toks(&["the", "food", "excellent"])];
        Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap()
    }

    #[test]
    fn bow_vocab_modes() {
        let v = tiny_vocab();
        let stop = Lexicon::from_words(["the"]);
        let sent = Lexicon::from_words(["excellent"]);

        let both = BowVocab::build(&v, &stop, &sent, BowFilterMode::NoStopwordsNoSentiment).unwrap();
        assert_eq!(both.words(), ["food"]);

        let full = BowVocab::build(&v, &stop, &sent, BowFilterMode::Full).unwrap();
        let mut full_words = full.words().to_vec();
        full_words.sort();
        assert_eq!(full_words, ["excellent", "food", "the"]);

        let nosent = BowVocab::build(&v, &stop, &sent, BowFilterMode::NoSentiment).unwrap();
        let mut ns = nosent.words().to_vec();
        ns.sort();
        assert_eq!(ns, ["food", "the"]);
    }

    #[test]
    fn bow_vocab_excludes_reserved_and_errors_when_empty() {
        let v = tiny_vocab();
        let full = BowVocab::build(&v, &Lexicon::default(), &Lexicon::default(), BowFilterMode::Full).unwrap();
        for r in RESERVED {
            assert!(full.index_of(r).is_none());
        }
        let all = Lexicon::from_words(["the", "food", "excellent"]);
        let r = BowVocab::build(&v, &all, &Lexicon::default(), BowFilterMode::NoStopwords);
        assert!(matches!(r, Err(Error::EmptyBowVocab { .. })));
    }

    #[test]
    fn bow_vocab_disjoint_from_lexicons_under_default_mode() {
        let sents = [toks(&["the", "food", "is", "excellent", "and", "pasta", "awesome", "tasted"])];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap();
        let stop = Lexicon::bundled_stopwords();
        let sent = Lexicon::bundled_sentiment();
        let bow = BowVocab::build(&v, &stop, &sent, BowFilterMode::NoStopwordsNoSentiment).unwrap();
        for w in bow.words() {
            assert!(!stop.contains(w) && !sent.contains(w), "{w} leaked through filters");
        }
    }

    #[test]
    fn bow_target_hand_counted_example() {
        let words = ["the", "food", "is", "excellent", "and", "pasta", "tasted", "awesome"];
        let sents = [toks(&words)];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap();
        let stop = Lexicon::from_words(["the", "is", "and"]);
        let sent = Lexicon::from_words(["excellent", "awesome"]);
        let bow = BowVocab::build(&v, &stop, &sent, BowFilterMode::NoStopwordsNoSentiment).unwrap();

        let ids = v.encode(&toks(&[
            "the", "food", "is", "excellent", "and", "the", "pasta", "tasted", "awesome",
        ]));
        let t = bow_target(&ids, &bow);
        assert_eq!(t.entries().len(), 3);
        for w in ["food", "pasta", "tasted"] {
            let ix = bow.index_of(w).unwrap();
            let p = t.entries().iter().find(|&&(i, _)| i == ix).unwrap().1;
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bow_target_degenerate_and_counts() {
        let sents = [toks(&["the", "is", "and", "food", "pasta"])];
        let v = Vocabulary::build(sents.iter().map(|s| s.as_slice()), 1).unwrap();
        let stop = Lexicon::from_words(["the", "is", "and"]);
        let bow =
            BowVocab::build(&v, &stop, &Lexicon::default(), BowFilterMode::NoStopwordsNoSentiment).unwrap();

        let empty = bow_target(&v.encode(&toks(&["the", "is", "and"])), &bow);
        assert!(empty.is_empty());

        let t = bow_target(&v.encode(&toks(&["food", "food", "pasta"])), &bow);
        let food = bow.index_of("food").unwrap();
        let pasta = bow.index_of("pasta").unwrap();
        let get = |ix| t.entries().iter().find(|&&(i, _)| i == ix).unwrap().1;
        assert!((get(food) - 2.0 / 3.0).abs() < 1e-12);
        assert!((get(pasta) - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.sum() - 1.0).abs() < 1e-9);
    }

    fn toy_sentences(n: usize) -> (Vec<Sentence>, BowVocab) {
        let raws: Vec<String> = (0..n).map(|i| format!("word{i} filler tail{}", i % 3)).collect();
        let pairs: Vec<(u8, String)> = raws.iter().map(|r| ((0u8), r.clone())).collect();
        let items = tokenize_pairs(&pairs);
        let v = Vocabulary::build(items.iter().map(|(_, t, _)| t.as_slice()), 1).unwrap();
        let bow =
            BowVocab::build(&v, &Lexicon::default(), &Lexicon::default(), BowFilterMode::Full).unwrap();
        (encode_sentences(&items, &v, 16), bow)
    }

    #[test]
    fn batch_partition_arithmetic() {
        let (sents, bow) = toy_sentences(10);
        let sizes: Vec<usize> = batch_iter(&sents, &bow, 4, 7).map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn batch_iter_deterministic_and_seed_sensitive() {
        let (sents, bow) = toy_sentences(12);
        let run = |seed| -> Vec<Vec<u32>> {
            batch_iter(&sents, &bow, 5, seed)
                .flat_map(|b| b.tokens.clone())
                .collect()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn batch_iter_emits_each_sentence_once() {
        let (sents, bow) = toy_sentences(9);
        let mut seen: Vec<Vec<u32>> = batch_iter(&sents, &bow, 4, 3)
            .flat_map(|b| {
                (0..b.len()).map(|i| b.sentence_tokens(i).to_vec()).collect::<Vec<_>>()
            })
            .collect();
        let mut expect: Vec<Vec<u32>> = sents.iter().map(|s| s.tokens.clone()).collect();
        seen.sort();
        expect.sort();
        assert_eq!(seen, expect);
    }

    #[test]
    fn batch_padding_invariant() {
        let raws = ["a", "a b c d", "a b"];
        let pairs: Vec<(u8, String)> = raws.iter().map(|r| (1u8, r.to_string())).collect();
        let items = tokenize_pairs(&pairs);
        let v = Vocabulary::build(items.iter().map(|(_, t, _)| t.as_slice()), 1).unwrap();
        let bow =
            BowVocab::build(&v, &Lexicon::default(), &Lexicon::default(), BowFilterMode::Full).unwrap();
        let sents = encode_sentences(&items, &v, 16);
        for batch in batch_iter(&sents, &bow, 3, 0) {
            for i in 0..batch.len() {
                for j in batch.lengths[i]..batch.tokens[i].len() {
                    assert_eq!(batch.tokens[i][j], PAD);
                }
            }
        }
    }

    #[test]
    fn encode_appends_eos_and_truncates() {
        let items = tokenize_pairs(&[(0u8, "a b c d e".to_string())]);
        let v = Vocabulary::build(items.iter().map(|(_, t, _)| t.as_slice()), 1).unwrap();
        let sents = encode_sentences(&items, &v, 4);
        assert_eq!(sents[0].tokens.len(), 4);
        assert_eq!(*sents[0].tokens.last().unwrap(), EOS);
        assert_eq!(sents[0].words().len(), 3);
    }

    #[test]
    fn lexicon_skips_comments() {
        let lex = Lexicon::from_reader("# comment\nGood\n\nbad\n".as_bytes()).unwrap();
        assert!(lex.contains("good") && lex.contains("bad"));
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn read_tsv_and_parallel_formats() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("c.tsv");
        std::fs::write(&tsv, "1\tgreat deal\n0\tno deal\n").unwrap();
        let rows = read_tsv(&tsv).unwrap();
        assert_eq!(rows, vec![(1, "great deal".into()), (0, "no deal".into())]);

        let txt = dir.path().join("c.txt");
        let lab = dir.path().join("c.labels");
        std::fs::write(&txt, "great deal\nno deal\n").unwrap();
        std::fs::write(&lab, "1\n0\n").unwrap();
        assert_eq!(read_parallel(&txt, &lab).unwrap(), rows);

        std::fs::write(&tsv, "2\toops\n").unwrap();
        assert!(read_tsv(&tsv).is_err());
    }
}
