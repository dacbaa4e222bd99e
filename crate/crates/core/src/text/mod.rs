//! Word-level text handling: tokenizer, vocabulary, corpora with
//! train/dev/test splits, batching, and the weighted grammars used to
//! synthesize domain corpora.

mod batch;
mod corpus;
mod grammar;
mod stopwords;
mod tokenize;
mod vocab;

pub use batch::batch_iter;
pub use corpus::{load_corpus, read_sentences, split_sentences, Split, Splits, TokenizedCorpus};
pub use grammar::{builtin_grammar, generate_domain, DomainGrammar, Production, BUILTIN_GRAMMARS};
pub use stopwords::{default_stopwords, load_stopwords, Stopwords};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocab, VocabProvenance, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID};
