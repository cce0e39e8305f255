//! Facial Action Coding System codebook, AU-string parsing, attribute phrases
//! and their tokenization.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// The action-unit codebook: id and description, in ascending id order.
pub const CODEBOOK: [(u32, &str); 30] = [
    (1, "Inner Brow Raiser"),
    (2, "Outer Brow Raiser"),
    (4, "Brow Lowerer"),
    (5, "Upper Lid Raiser"),
    (6, "Check Raiser"),
    (7, "Lid Tightener"),
    (9, "Nose Wrinkler"),
    (10, "Upper Lip Raiser"),
    (11, "Nasolabial Deepener"),
    (12, "Lip Corner Puller"),
    (13, "Check Puffer"),
    (14, "Dimpler"),
    (15, "Lip Corner Depressor"),
    (16, "Lower Lip Depressor"),
    (17, "Chin Raiser"),
    (18, "Lip Puckerer"),
    (20, "Lip stretcher"),
    (22, "Lip Funneler"),
    (23, "Lip Tightener"),
    (24, "Lip Pressor"),
    (25, "Lips part"),
    (26, "Jaw Drop"),
    (27, "Mouth Stretch"),
    (28, "Lip Suck"),
    (41, "Lid droop"),
    (42, "Slit"),
    (43, "Eyes Closed"),
    (44, "Squint"),
    (45, "Blink"),
    (46, "Wink"),
];

/// Word placed between per-unit descriptions.
pub const JOINER: &str = "and";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ActionUnit {
    pub id: u32,
    pub description: &'static str,
}

impl ActionUnit {
    pub fn lookup(id: u32) -> Result<Self> {
        CODEBOOK
            .iter()
            .find(|(i, _)| *i == id)
            .map(|&(id, description)| ActionUnit { id, description })
            .ok_or(Error::UnknownAu(id))
    }

    pub fn all() -> impl Iterator<Item = ActionUnit> {
        CODEBOOK.iter().map(|&(id, description)| ActionUnit { id, description })
    }
}

/// Codebook as CSV with an `au_id,description` header.
pub fn codebook_csv() -> String {
    let mut s = String::from("au_id,description\n");
    for au in ActionUnit::all() {
        let _ = writeln!(s, "{},{}", au.id, au.description);
    }
    s
}

fn dedup_in_order(ids: impl IntoIterator<Item = u32>) -> Vec<u32> {
    let mut out = Vec::new();
    for id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Parse `AU<digits>` terms joined by `+` (case-insensitive, whitespace allowed).
/// Returns ids in input order with duplicates dropped.
pub fn parse_au_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut pos = 0;
    let mut ids = Vec::new();
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    let err = |position: usize, message: &str| Error::Parse { position, message: message.into() };
    loop {
        skip_ws(&mut pos);
        if pos + 2 > bytes.len() || !bytes[pos..pos + 2].eq_ignore_ascii_case(b"au") {
            return Err(err(pos, "expected `AU`"));
        }
        pos += 2;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected digits after `AU`"));
        }
        let id: u32 = s[start..pos].parse().map_err(|_| err(start, "AU number out of range"))?;
        ActionUnit::lookup(id)?;
        ids.push(id);
        skip_ws(&mut pos);
        match bytes.get(pos) {
            None => break,
            Some(b'+') => pos += 1,
            Some(_) => return Err(err(pos, "expected `+` or end of input")),
        }
    }
    Ok(dedup_in_order(ids))
}

/// Canonical `AU6+AU12` spelling.
pub fn format_au_string(ids: &[u32]) -> String {
    ids.iter().map(|id| format!("AU{id}")).collect::<Vec<_>>().join("+")
}

/// Attribute text derived from a set of action units.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttributePhrase {
    pub text: String,
    pub source_aus: Vec<u32>,
}

/// Join the lowercased codebook descriptions of `aus` with `" and "`.
pub fn describe(aus: &[u32]) -> Result<AttributePhrase> {
    let ids = dedup_in_order(aus.iter().copied());
    if ids.is_empty() {
        return Err(Error::Contract("describe needs at least one action unit".into()));
    }
    let parts = ids
        .iter()
        .map(|&id| ActionUnit::lookup(id).map(|au| au.description.to_lowercase()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributePhrase { text: parts.join(&format!(" {JOINER} ")), source_aus: ids })
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Token to id map; 0 is padding, 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Every codebook word plus the joiner, numbered in order of first appearance.
    pub fn from_codebook() -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        let words = ActionUnit::all()
            .flat_map(|au| au.description.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .chain(std::iter::once(JOINER.to_string()));
        for w in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { ids, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

/// Whitespace tokens mapped to ids, truncated or padded with [`PAD_ID`] to `max_len`.
pub fn tokenize(phrase: &AttributePhrase, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = phrase
        .text
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()))
        .take(max_len)
        .collect();
    ids.resize(max_len, PAD_ID);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_au_string("AU6+AU12").unwrap(), vec![6, 12]);
        assert_eq!(parse_au_string("AU4").unwrap(), vec![4]);
        assert_eq!(parse_au_string(" au1 + Au2 ").unwrap(), vec![1, 2]);
        assert_eq!(parse_au_string("AU4+AU4").unwrap(), vec![4]);
        assert!(matches!(parse_au_string("AU99"), Err(Error::UnknownAu(99))));
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_au_string("AU6+X12") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_au_string(""), Err(Error::Parse { position: 0, .. })));
        assert!(matches!(parse_au_string("AU6+"), Err(Error::Parse { .. })));
        assert!(matches!(parse_au_string("AU6 AU12"), Err(Error::Parse { position: 4, .. })));
    }

    #[test]
    fn describe_examples() {
        assert_eq!(describe(&[6, 12]).unwrap().text, "check raiser and lip corner puller");
        assert_eq!(describe(&[1]).unwrap().text, "inner brow raiser");
        let p = describe(&[4, 4]).unwrap();
        assert_eq!(p.text, "brow lowerer");
        assert_eq!(p.source_aus, vec![4]);
        assert!(matches!(describe(&[]), Err(Error::Contract(_))));
        assert!(matches!(describe(&[3]), Err(Error::UnknownAu(3))));
    }

    #[test]
    fn tokenize_pads_and_maps_unknowns() {
        let vocab = Vocabulary::from_codebook();
        let p = describe(&[1]).unwrap();
        let ids = tokenize(&p, &vocab, 5);
        assert_eq!(ids, vec![vocab.id("inner"), vocab.id("brow"), vocab.id("raiser"), 0, 0]);
        assert!(ids[..3].iter().all(|&i| i > UNK_ID));

        let odd = AttributePhrase { text: "brow zebra".into(), source_aus: vec![] };
        assert_eq!(tokenize(&odd, &vocab, 2), vec![vocab.id("brow"), UNK_ID]);
        assert_eq!(tokenize(&p, &vocab, 2).len(), 2);
        assert_eq!(tokenize(&p, &vocab, 5), ids);
    }

    #[test]
    fn vocabulary_is_deterministic() {
        assert_eq!(Vocabulary::from_codebook(), Vocabulary::from_codebook());
        let v = Vocabulary::from_codebook();
        assert_eq!(v.token(PAD_ID), Some("<pad>"));
        assert_eq!(v.id(JOINER), v.id("and"));
        assert_ne!(v.id("and"), UNK_ID);
    }

    #[test]
    fn csv_export_has_header_and_thirty_rows() {
        let csv = codebook_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "au_id,description");
        assert_eq!(lines.len(), 31);
        assert_eq!(lines[5], "6,Check Raiser");
    }
}
