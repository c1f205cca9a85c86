//! Parameter-free string similarity baselines.

use std::fmt;
use std::str::FromStr;

use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

/// Unit-cost edit distance over codepoints.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length of the longest common subsequence over codepoints.
pub fn lcs(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for ca in &a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_hit[j] && b[j] == *ca {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let left: Vec<char> = a.iter().zip(&a_hit).filter(|(_, &h)| h).map(|(c, _)| *c).collect();
    let right: Vec<char> = b.iter().zip(&b_hit).filter(|(_, &h)| h).map(|(c, _)| *c).collect();
    let half_transpositions = left.iter().zip(&right).filter(|(x, y)| x != y).count();
    let m = matches as f64;
    let t = (half_transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro similarity with the Winkler common-prefix boost (scale 0.1, up to 4 characters).
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    let prefix = a.chars().zip(b.chars()).take(4).take_while(|(x, y)| x == y).count();
    j + prefix as f64 * 0.1 * (1.0 - j)
}

fn soundex_digit(c: char) -> u8 {
    match c {
        'B' | 'F' | 'P' | 'V' => b'1',
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => b'2',
        'D' | 'T' => b'3',
        'L' => b'4',
        'M' | 'N' => b'5',
        'R' => b'6',
        _ => b'0',
    }
}

/// Decomposes, drops combining marks and other non-ASCII, uppercases.
pub fn ascii_fold(s: &str) -> String {
    s.nfd().filter(char::is_ascii).collect::<String>().to_ascii_uppercase()
}

/// American Soundex of one token; `"0000"` if it has no letters.
pub fn soundex(token: &str) -> String {
    let letters: Vec<char> = ascii_fold(token).chars().filter(char::is_ascii_alphabetic).collect();
    let Some((&first, rest)) = letters.split_first() else {
        return "0000".to_string();
    };
    let mut code = vec![first as u8];
    let mut prev = soundex_digit(first);
    for &c in rest {
        if code.len() == 4 {
            break;
        }
        if c == 'H' || c == 'W' {
            continue;
        }
        let d = soundex_digit(c);
        if d != b'0' && d != prev {
            code.push(d);
        }
        prev = d;
    }
    code.resize(4, b'0');
    String::from_utf8(code).expect("ascii")
}

/// Per-token Soundex codes joined by single spaces.
pub fn soundex_tokens(s: &str) -> String {
    s.split_whitespace().map(soundex).collect::<Vec<_>>().join(" ")
}

fn normalized(dist: usize, a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - dist as f64 / n as f64
    }
}

pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    normalized(levenshtein(a, b), a, b)
}

pub fn lcs_similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        1.0
    } else {
        lcs(a, b) as f64 / n as f64
    }
}

pub fn soundex_similarity(a: &str, b: &str) -> f64 {
    levenshtein_similarity(&soundex_tokens(a), &soundex_tokens(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassicMetric {
    Lev,
    Jw,
    Lcs,
    Sdx,
}

impl ClassicMetric {
    pub const ALL: [ClassicMetric; 4] = [Self::Lev, Self::Jw, Self::Lcs, Self::Sdx];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lev => "lev",
            Self::Jw => "jw",
            Self::Lcs => "lcs",
            Self::Sdx => "sdx",
        }
    }

    /// Similarity in `[0, 1]`, higher is more similar.
    pub fn similarity(self, a: &str, b: &str) -> ClassicScore {
        let value = match self {
            Self::Lev => levenshtein_similarity(a, b),
            Self::Jw => jaro_winkler(a, b),
            Self::Lcs => lcs_similarity(a, b),
            Self::Sdx => soundex_similarity(a, b),
        };
        ClassicScore { metric: self, value }
    }
}

impl fmt::Display for ClassicMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassicMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown classic metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicScore {
    pub metric: ClassicMetric,
    pub value: f64,
}
