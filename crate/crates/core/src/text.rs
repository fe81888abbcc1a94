//! Surface-string helpers for the toy language.
//!
//! Target words may be split into two pieces; the first piece carries the
//! continuation marker `@@` (`"w12@@ a"` detokenizes to `"w12a"`).

/// Continuation marker appended to non-final word pieces.
pub const CONTINUATION: &str = "@@";

/// Join word pieces and normalise whitespace.
pub fn detokenize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut glue = false;
    for tok in text.split_whitespace() {
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        match tok.strip_suffix(CONTINUATION) {
            Some(stem) => {
                out.push_str(stem);
                glue = true;
            }
            None => {
                out.push_str(tok);
                glue = false;
            }
        }
    }
    out
}

/// Group whitespace tokens into words; each returned word keeps its piece
/// spelling (`"w12@@ a"`), so it can be encoded directly.
pub fn words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        current.push(tok);
        if !tok.ends_with(CONTINUATION) {
            words.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        words.push(current.join(" "));
    }
    words
}
