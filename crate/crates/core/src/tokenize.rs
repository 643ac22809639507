//! A toy subword tokenizer with a greedy longest-match canonical rule.
//!
//! Every character of every multi-character token must itself be a token, so
//! any string over the alphabet tokenizes and greedy matching never gets stuck.
//! Characters outside the alphabet map to an optional catch-all atom.

use std::collections::HashMap;

use crate::constraints::{Sequence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyVocab {
    /// Token strings by id; the pad slot holds an empty string.
    pieces: Vec<String>,
    pad: Token,
    catch_all: Option<Token>,
    index: HashMap<String, Token>,
    longest: usize,
}

/// Result of canonization: either a padded canonical sequence or the overflow
/// marker, which by construction satisfies no constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Canonized {
    Tokens(Sequence),
    Overflow,
}

impl Canonized {
    pub fn tokens(&self) -> Option<&[Token]> {
        match self {
            Canonized::Tokens(t) => Some(t),
            Canonized::Overflow => None,
        }
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Canonized::Overflow)
    }
}

impl ToyVocab {
    /// Builds a vocabulary from token strings in id order. `pieces[pad]` is
    /// ignored and `catch_all`, if given, must name a single-character token.
    pub fn from_parts(mut pieces: Vec<String>, pad: Token, catch_all: Option<Token>) -> Result<Self> {
        let k = pieces.len();
        if k < 2 {
            return Err(Error::Parameter(format!("vocabulary needs at least 2 tokens, got {k}")));
        }
        if pad as usize >= k {
            return Err(Error::Index(format!("pad token {pad} outside vocabulary {k}")));
        }
        pieces[pad as usize].clear();
        let mut index = HashMap::new();
        for (id, p) in pieces.iter().enumerate() {
            if id == pad as usize {
                continue;
            }
            if p.is_empty() {
                return Err(Error::Parameter(format!("token {id} is empty")));
            }
            if index.insert(p.clone(), id as Token).is_some() {
                return Err(Error::Parameter(format!("duplicate token {p:?}")));
            }
        }
        for p in &pieces {
            for c in p.chars() {
                if !index.contains_key(c.encode_utf8(&mut [0; 4]) as &str) {
                    return Err(Error::Parameter(format!(
                        "token {p:?} uses character {c:?} which is not itself a token"
                    )));
                }
            }
        }
        if let Some(c) = catch_all {
            if c == pad || c as usize >= k || pieces[c as usize].chars().count() != 1 {
                return Err(Error::Parameter(format!("catch-all {c} must be a single-character token")));
            }
        }
        let longest = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(ToyVocab { pieces, pad, catch_all, index, longest })
    }

    /// Tokens in the given order followed by the pad token.
    pub fn new(pieces: &[&str]) -> Result<Self> {
        let mut v: Vec<String> = pieces.iter().map(|s| s.to_string()).collect();
        let pad = v.len() as Token;
        v.push(String::new());
        Self::from_parts(v, pad, None)
    }

    /// One token per character of `alphabet`, plus pad. Canonization is the
    /// identity up to moving pads to the end.
    pub fn identity(alphabet: &str) -> Result<Self> {
        let atoms: Vec<String> = alphabet.chars().map(String::from).collect();
        Self::new(&atoms.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// Vocabulary for word banning: the alphabet's atoms, each word as a
    /// merged token, optionally a space-prefixed copy of every word, an
    /// optional catch-all atom, then pad.
    pub fn for_words(alphabet: &str, words: &[&str], space_variants: bool, catch_all: Option<char>) -> Result<Self> {
        let mut pieces: Vec<String> = Vec::new();
        let push = |s: String, pieces: &mut Vec<String>| {
            if !pieces.contains(&s) {
                pieces.push(s);
            }
        };
        for c in alphabet.chars() {
            push(c.to_string(), &mut pieces);
        }
        if space_variants {
            push(" ".to_string(), &mut pieces);
        }
        for w in words {
            for c in w.chars() {
                push(c.to_string(), &mut pieces);
            }
            push(w.to_string(), &mut pieces);
            if space_variants {
                push(format!(" {w}"), &mut pieces);
            }
        }
        let catch = catch_all.map(|c| {
            push(c.to_string(), &mut pieces);
            pieces.iter().position(|p| *p == c.to_string()).unwrap() as Token
        });
        let pad = pieces.len() as Token;
        pieces.push(String::new());
        Self::from_parts(pieces, pad, catch)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pad(&self) -> Token {
        self.pad
    }

    pub fn catch_all(&self) -> Option<Token> {
        self.catch_all
    }

    pub fn piece(&self, t: Token) -> &str {
        &self.pieces[t as usize]
    }

    pub fn id(&self, piece: &str) -> Option<Token> {
        self.index.get(piece).copied()
    }

    /// Greedy longest-match tokenization. Characters with no token go to the
    /// catch-all; without one they are an error.
    pub fn tokenize(&self, s: &str) -> Result<Sequence> {
        let chars: Vec<(usize, char)> = s.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let mut found = None;
            for len in (1..=self.longest.min(chars.len() - i)).rev() {
                let end = chars.get(i + len).map_or(s.len(), |&(b, _)| b);
                if let Some(&t) = self.index.get(&s[start..end]) {
                    found = Some((t, len));
                    break;
                }
            }
            match (found, self.catch_all) {
                (Some((t, len)), _) => {
                    out.push(t);
                    i += len;
                }
                (None, Some(c)) => {
                    out.push(c);
                    i += 1;
                }
                (None, None) => {
                    return Err(Error::Parameter(format!("character {:?} has no token", chars[i].1)));
                }
            }
        }
        Ok(out)
    }

    /// Concatenates token strings, dropping pads.
    pub fn detokenize(&self, t: &[Token]) -> String {
        t.iter().map(|&x| self.piece(x)).collect()
    }

    /// Detokenizes, re-tokenizes canonically and right-pads to `n`.
    pub fn canonize(&self, t: &[Token], n: usize) -> Canonized {
        let s = self.detokenize(t);
        // every character of a detokenized string is an atom
        let mut c = self.tokenize(&s).expect("detokenized text is always tokenizable");
        if c.len() > n {
            return Canonized::Overflow;
        }
        c.resize(n, self.pad);
        Canonized::Tokens(c)
    }

    /// Every token sequence (without pads) spelling `s` in at most `max_len`
    /// tokens, in lexicographic order of token ids.
    pub fn enumerate_tokenizations(&self, s: &str, max_len: usize) -> Vec<Sequence> {
        let mut ids: Vec<Token> = (0..self.len() as Token).filter(|&t| t != self.pad).collect();
        ids.sort_unstable();
        let mut out = Vec::new();
        let mut cur = Vec::new();
        self.enumerate_rec(s, max_len, &ids, &mut cur, &mut out);
        out
    }

    fn enumerate_rec(&self, rest: &str, max_len: usize, ids: &[Token], cur: &mut Sequence, out: &mut Vec<Sequence>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        if cur.len() == max_len {
            return;
        }
        for &t in ids {
            if rest.starts_with(self.piece(t)) {
                cur.push(t);
                self.enumerate_rec(&rest[self.piece(t).len()..], max_len, ids, cur, out);
                cur.pop();
            }
        }
    }

    /// Vocabulary file: one token per line in id order, kept verbatim.
    /// `#pad` marks the pad slot and `#catchall X` declares the catch-all atom.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut pad = None;
        let mut catch = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            if line == "#pad" {
                if pad.is_some() {
                    return Err(Error::parse(ln + 1, "second #pad directive"));
                }
                pad = Some(pieces.len() as Token);
                pieces.push(String::new());
            } else if let Some(c) = line.strip_prefix("#catchall ") {
                if catch.is_some() {
                    return Err(Error::parse(ln + 1, "second #catchall directive"));
                }
                if c.chars().count() != 1 {
                    return Err(Error::parse(ln + 1, "catch-all must be one character"));
                }
                catch = Some(pieces.len() as Token);
                pieces.push(c.to_string());
            } else {
                pieces.push(line.to_string());
            }
        }
        let pad = pad.ok_or_else(|| Error::parse(0, "missing #pad directive"))?;
        Self::from_parts(pieces, pad, catch)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, p) in self.pieces.iter().enumerate() {
            let id = id as Token;
            if id == self.pad {
                s.push_str("#pad");
            } else if Some(id) == self.catch_all {
                s.push_str("#catchall ");
                s.push_str(p);
            } else {
                s.push_str(p);
            }
            s.push('\n');
        }
        s
    }
}
