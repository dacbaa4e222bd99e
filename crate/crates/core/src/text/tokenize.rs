/// Lowercases and splits on Unicode whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize("Large Fries PLEASE"), ["large", "fries", "please"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  a  b "), ["a", "b"]);
        assert_eq!(tokenize("x\u{3000}y\tz\n"), ["x", "y", "z"]);
    }
}
