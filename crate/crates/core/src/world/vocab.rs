use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;

/// Default padded sentence length, including `[CLS]` and `[SEP]`.
pub const L_MAX: usize = 12;

pub const WORDS: [&str; 24] = [
    "[PAD]", "[CLS]", "[SEP]", "the", "a", "is", "moving", "still", "left", "right", "up", "down", "red", "green",
    "blue", "yellow", "cyan", "magenta", "square", "disk", "object", "that", "slowly", "fast",
];

pub fn vocab_size() -> usize {
    WORDS.len()
}

pub fn word_id(word: &str) -> Result<usize> {
    WORDS
        .iter()
        .position(|&w| w == word)
        .ok_or_else(|| Error::Vocabulary(format!("unknown word {word:?}")))
}

pub fn word(id: usize) -> Result<&'static str> {
    WORDS.get(id).copied().ok_or_else(|| Error::Vocabulary(format!("unknown token id {id}")))
}

/// `[CLS] words... [SEP]` padded with `[PAD]` to `l_max`. Overlong input is an error.
pub fn encode_sentence(text: &str, l_max: usize) -> Result<Vec<usize>> {
    let mut ids = vec![CLS];
    for w in text.split_whitespace() {
        ids.push(word_id(w)?);
    }
    ids.push(SEP);
    if ids.len() > l_max {
        return Err(Error::Vocabulary(format!(
            "sentence needs {} tokens but the maximum is {l_max}: {text:?}",
            ids.len()
        )));
    }
    ids.resize(l_max, PAD);
    Ok(ids)
}

/// `id word` per line.
pub fn vocab_file() -> String {
    WORDS.iter().enumerate().map(|(i, w)| format!("{i} {w}\n")).collect()
}
