use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Stopwords;

/// Edit operations of a minimum-cost alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; may exceed 1 when insertions dominate.
    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.reference_length as f64
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_length += o.reference_length;
    }
}

/// Levenshtein distance with unit costs, backtracked into S/D/I counts.
pub fn edit_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> ErrorCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = ErrorCounts {
        reference_length: n,
        ..ErrorCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                counts.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Word error counts of `hyp` against a non-empty `reference`.
pub fn wer<S: AsRef<str>>(reference: &[S], hyp: &[S]) -> Result<ErrorCounts> {
    if reference.is_empty() {
        return Err(Error::UndefinedRate("reference is empty".into()));
    }
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    Ok(edit_counts(&r, &h))
}

/// Word error counts after removing stopwords from both sides.
pub fn cwer<S: AsRef<str>>(reference: &[S], hyp: &[S], stopwords: &Stopwords) -> Result<ErrorCounts> {
    let keep = |s: &[S]| -> Vec<String> {
        s.iter()
            .map(AsRef::as_ref)
            .filter(|t| !stopwords.contains(t))
            .map(String::from)
            .collect()
    };
    let r = keep(reference);
    if r.is_empty() {
        return Err(Error::UndefinedRate("reference has no content words".into()));
    }
    wer(&r, &keep(hyp))
}
