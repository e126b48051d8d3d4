//! Token counting.
//!
//! The harness does not ship a model tokenizer. [`ApproxTokenCounter`] (the
//! default) estimates subword tokens as 1.3 per whitespace-delimited word,
//! rounded up; thresholds that consume counts are configurable to absorb the
//! approximation.

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// One token per whitespace-delimited word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenCounter;

impl TokenCounter for WhitespaceTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// `ceil(words * 13 / 10)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * 13).div_ceil(10)
    }
}

/// Counts with the default counter.
pub fn count_tokens(text: &str) -> usize {
    ApproxTokenCounter.count(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basics() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(WhitespaceTokenCounter.count("a b c"), 3);
        assert_eq!(ApproxTokenCounter.count("a b c"), 4);
        assert_eq!(ApproxTokenCounter.count("w ".repeat(10).as_str()), 13);
    }

    proptest! {
        #[test]
        fn monotone_under_repetition(text in "[a-z ]{0,40}", k in 1usize..5) {
            let once = count_tokens(&text);
            let more = count_tokens(&text.repeat(k + 1));
            prop_assert!(more >= once);
            prop_assert_eq!(count_tokens(&text), once);
        }
    }
}
