use std::collections::{HashMap, HashSet};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpellingError {
    #[error("dictionary {path}: {source}")]
    MissingDictionary { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: expected `abbreviation<TAB>expansion`")]
    BadAbbreviation { path: String, line: usize },
    #[error("dictionary is empty")]
    EmptyDictionary,
}

/// Dictionary lookup with abbreviation expansion and a slang allow-list.
#[derive(Debug, Clone, Default)]
pub struct SpellChecker {
    words: HashSet<String>,
    abbreviations: HashMap<String, Vec<String>>,
    slang: HashSet<String>,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

impl SpellChecker {
    /// `dictionary`: one word per line, anything after the first whitespace
    /// ignored. `abbreviations`: tab-separated pairs. `slang`: one term per line.
    pub fn from_strs(dictionary: &str, abbreviations: &str, slang: &str) -> Result<Self, SpellingError> {
        let words: HashSet<String> = data_lines(dictionary)
            .filter_map(|(_, l)| l.split_whitespace().next())
            .map(|w| w.to_lowercase())
            .collect();
        if words.is_empty() {
            return Err(SpellingError::EmptyDictionary);
        }
        let mut abbr = HashMap::new();
        for (line, l) in data_lines(abbreviations) {
            let (k, v) = l.split_once('\t').ok_or_else(|| SpellingError::BadAbbreviation {
                path: "abbreviations".into(),
                line,
            })?;
            abbr.insert(k.trim().to_lowercase(), v.split_whitespace().map(|w| w.to_lowercase()).collect());
        }
        let slang = data_lines(slang).map(|(_, l)| l.trim().to_lowercase()).collect();
        Ok(Self {
            words,
            abbreviations: abbr,
            slang,
        })
    }

    /// Loads `dictionary.txt`, `abbreviations.tsv` and `slang.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, SpellingError> {
        let dir = dir.as_ref();
        let dict_path = dir.join("dictionary.txt");
        let dictionary = std::fs::read_to_string(&dict_path).map_err(|source| SpellingError::MissingDictionary {
            path: dict_path.display().to_string(),
            source,
        })?;
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|source| SpellingError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::from_strs(&dictionary, &read("abbreviations.tsv")?, &read("slang.txt")?)
    }

    pub fn dictionary_len(&self) -> usize {
        self.words.len()
    }

    pub fn knows(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    /// Lowercases, turns everything but letters, digits and apostrophes into
    /// spaces, expands abbreviations and drops slang, proxy labels and tokens
    /// without letters.
    pub fn normalize(&self, text: &str, proxy_labels: &[String]) -> Vec<String> {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .map(|c| match c {
                '\u{2019}' | '\u{2018}' => '\'',
                c if c.is_alphanumeric() || c == '\'' => c,
                _ => ' ',
            })
            .collect();
        let mut out = Vec::new();
        for raw in cleaned.split_whitespace() {
            let tok = raw.trim_matches('\'');
            if tok.is_empty() {
                continue;
            }
            let expanded = match self.abbreviations.get(tok) {
                Some(e) => e.clone(),
                None => vec![tok.to_owned()],
            };
            for t in expanded {
                if self.slang.contains(&t) || proxy_labels.contains(&t) || !t.chars().any(char::is_alphabetic) {
                    continue;
                }
                out.push(t);
            }
        }
        out
    }

    pub fn misspellings(&self, text: &str, proxy_labels: &[String]) -> Vec<String> {
        self.normalize(text, proxy_labels)
            .into_iter()
            .filter(|t| !self.words.contains(t))
            .collect()
    }

    pub fn is_flagged(&self, text: &str, proxy_labels: &[String]) -> bool {
        !self.misspellings(text, proxy_labels).is_empty()
    }
}
