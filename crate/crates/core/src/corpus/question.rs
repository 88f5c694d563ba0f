use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Bodies are cut to this many tokens after marker stripping.
pub const MAX_BODY_TOKENS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub id: u64,
    pub title: Vec<String>,
    pub body: Vec<String>,
}

impl Question {
    pub fn new(id: u64, title: &str, body: &str) -> Result<Self> {
        let title = tokenize(title);
        if title.is_empty() {
            return Err(Error::Data(format!("question {id} has an empty title")));
        }
        let body = truncate(strip_duplicate_markers(tokenize(body)));
        Ok(Question { id, title, body })
    }

    /// Title followed by body.
    pub fn all_tokens(&self) -> impl Iterator<Item = &str> {
        self.title.iter().chain(&self.body).map(String::as_str)
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn truncate(mut body: Vec<String>) -> Vec<String> {
    body.truncate(MAX_BODY_TOKENS);
    body
}

fn is_open_quote(tok: &str) -> bool {
    tok.starts_with(['"', '\u{201c}', '\'', '`'])
}

fn is_close_quote(tok: &str) -> bool {
    tok.ends_with(['"', '\u{201d}', '\'', '`'])
}

/// Removes every `possible duplicate: <title>` block from a tokenized body.
///
/// The block is the phrase `possible duplicate` (optionally followed by `:`)
/// plus the duplicate's title: a quoted span when the next token opens a
/// quote, otherwise everything up to and including the next `?` token, or
/// the rest of the body if there is none. Removal repeats until no marker
/// is left, so the result is stable under a second pass.
pub fn strip_duplicate_markers(mut body: Vec<String>) -> Vec<String> {
    loop {
        let before = body.len();
        body = strip_once(body);
        if body.len() == before {
            return body;
        }
    }
}

fn strip_once(body: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(body.len());
    let mut i = 0;
    while i < body.len() {
        let is_marker = body[i] == "possible" && body.get(i + 1).is_some_and(|t| t == "duplicate" || t == "duplicate:");
        if !is_marker {
            out.push(body[i].clone());
            i += 1;
            continue;
        }
        i += 2;
        if body.get(i).is_some_and(|t| t == ":") {
            i += 1;
        }
        match body.get(i) {
            Some(t) if is_open_quote(t) => {
                let single = t.chars().count() > 1 && is_close_quote(t);
                let mut j = i;
                if !single {
                    j += 1;
                    while j < body.len() && !is_close_quote(&body[j]) {
                        j += 1;
                    }
                }
                i = (j + 1).min(body.len());
            }
            Some(_) => {
                let mut j = i;
                while j < body.len() && body[j] != "?" && !body[j].ends_with('?') {
                    j += 1;
                }
                i = (j + 1).min(body.len());
            }
            None => {}
        }
    }
    out
}

/// An id-indexed question collection.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    questions: Vec<Question>,
    by_id: HashMap<u64, usize>,
}

impl Corpus {
    pub fn from_questions(questions: Vec<Question>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if by_id.insert(q.id, i).is_some() {
                return Err(Error::DuplicateId(q.id));
            }
        }
        Ok(Corpus { questions, by_id })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: u64) -> Option<&Question> {
        self.by_id.get(&id).map(|&i| &self.questions[i])
    }

    pub fn require(&self, id: u64) -> Result<&Question> {
        self.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.questions.iter().map(|q| q.id).collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let n = self.questions.len().max(1) as f64;
        CorpusStats {
            questions: self.questions.len(),
            avg_title_len: self.questions.iter().map(|q| q.title.len()).sum::<usize>() as f64 / n,
            avg_body_len: self.questions.iter().map(|q| q.body.len()).sum::<usize>() as f64 / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub questions: usize,
    pub avg_title_len: f64,
    pub avg_body_len: f64,
}

/// Parses `id<TAB>title<TAB>body` lines. Blank lines are skipped.
pub fn parse_corpus(reader: impl BufRead, source: &str) -> Result<Corpus> {
    let mut questions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                source,
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad question id `{}`", fields[0])))?;
        let q = Question::new(id, fields[1], fields[2]).map_err(|e| Error::parse(source, i + 1, e))?;
        questions.push(q);
    }
    Corpus::from_questions(questions)
}

pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    for q in corpus.questions() {
        writeln!(w, "{}\t{}\t{}", q.id, q.title.join(" "), q.body.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn parses_a_line() {
        let c = parse_corpus("7\thow to boot from usb\ti bought a pc".as_bytes(), "t").unwrap();
        let q = c.get(7).unwrap();
        assert_eq!(q.title.len(), 5);
        assert_eq!(q.body, toks("i bought a pc"));
    }

    #[test]
    fn long_body_is_truncated() {
        let body: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let line = format!("1\ttitle\t{}", body.join(" "));
        let c = parse_corpus(line.as_bytes(), "t").unwrap();
        assert_eq!(c.get(1).unwrap().body, body[..100].to_vec());
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            parse_corpus("1\tonly title".as_bytes(), "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_corpus("1\t \tbody".as_bytes(), "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_corpus("x\ta\tb".as_bytes(), "t"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_corpus("1\ta\tb\n1\tc\td".as_bytes(), "t"),
            Err(Error::DuplicateId(1))
        ));
    }

    #[test]
    fn tokens_are_lowercased() {
        let q = Question::new(3, "Boot From USB", "").unwrap();
        assert_eq!(q.title, toks("boot from usb"));
        assert!(q.body.is_empty());
    }

    #[test]
    fn marker_absent_is_noop() {
        let b = toks("my wifi does not work after upgrade");
        assert_eq!(strip_duplicate_markers(b.clone()), b);
    }

    #[test]
    fn quoted_marker_block_is_removed() {
        let b = toks("possible duplicate : \" how do i install java ? \" i tried apt but it fails");
        assert_eq!(strip_duplicate_markers(b), toks("i tried apt but it fails"));
        let b = toks("intro text possible duplicate: \"install java\" rest here");
        assert_eq!(strip_duplicate_markers(b), toks("intro text rest here"));
    }

    #[test]
    fn unquoted_marker_runs_to_question_mark() {
        let b = toks("possible duplicate : how do i install java ? then the body");
        assert_eq!(strip_duplicate_markers(b), toks("then the body"));
    }

    #[test]
    fn marker_only_body_becomes_empty() {
        let b = toks("possible duplicate : \" how to mount a drive \"");
        assert!(strip_duplicate_markers(b).is_empty());
        let q = Question::new(1, "t", "possible duplicate: how to mount a drive?").unwrap();
        assert!(q.body.is_empty());
    }

    #[test]
    fn stripping_happens_before_truncation() {
        let filler: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let body = format!("possible duplicate : \" old title \" {}", filler.join(" "));
        let q = Question::new(1, "t", &body).unwrap();
        assert_eq!(q.body, filler);
    }

    fn token() -> impl Strategy<Value = String> {
        prop_oneof![
            4 => "[a-z]{1,6}",
            1 => Just("possible".to_string()),
            1 => Just("duplicate".to_string()),
            1 => Just("?".to_string()),
            1 => Just("\"".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn truncation_is_idempotent(body in prop::collection::vec(token(), 0..300)) {
            let once = truncate(strip_duplicate_markers(body));
            prop_assert!(once.len() <= MAX_BODY_TOKENS);
            prop_assert_eq!(truncate(once.clone()), once);
        }

        #[test]
        fn write_then_parse_is_identity(
            rows in prop::collection::vec((prop::collection::vec("[a-z]{1,5}", 1..6), prop::collection::vec(token(), 0..120)), 1..12)
        ) {
            let text: String = rows.iter().enumerate()
                .map(|(i, (t, b))| format!("{}\t{}\t{}\n", i, t.join(" "), b.join(" ")))
                .collect();
            let first = parse_corpus(text.as_bytes(), "a").unwrap();
            let mut buf = Vec::new();
            write_corpus(&first, &mut buf).unwrap();
            let second = parse_corpus(&buf[..], "b").unwrap();
            prop_assert_eq!(first.questions(), second.questions());
        }
    }
}
