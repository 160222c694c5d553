//! Question tokenization with byte offsets into the original text.
//!
//! Words are maximal runs of alphanumeric characters (plus inner apostrophes,
//! hyphens and dots between digits); every other non-whitespace character is a
//! token of its own.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
}

impl Token {
    pub fn normalized(&self) -> String {
        self.text.to_lowercase()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits on whitespace and punctuation, keeping punctuation as tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_word_char(c) {
            let mut j = i + 1;
            while j < chars.len() {
                let ch = chars[j].1;
                if is_word_char(ch) {
                    j += 1;
                    continue;
                }
                // Joiners stay inside a word only when flanked by word chars:
                // "don't", "K-12", "3.5".
                let joiner = matches!(ch, '\'' | '-' | '’')
                    || (ch == '.' && chars[j - 1].1.is_ascii_digit());
                let next_ok = chars
                    .get(j + 1)
                    .map(|&(_, n)| if ch == '.' { n.is_ascii_digit() } else { is_word_char(n) })
                    .unwrap_or(false);
                if joiner && next_ok {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map(|&(o, _)| o).unwrap_or(text.len());
            tokens.push(Token { text: text[start..end].to_string(), start, end });
            i = j;
        } else {
            let end = start + c.len_utf8();
            tokens.push(Token { text: text[start..end].to_string(), start, end });
            i += 1;
        }
    }
    tokens
}

/// Token texts only.
pub fn token_texts(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        let toks = token_texts("Which schools, in Alameda County, offer K-12?");
        assert_eq!(
            toks,
            vec!["Which", "schools", ",", "in", "Alameda", "County", ",", "offer", "K-12", "?"]
        );
    }

    #[test]
    fn offsets_point_into_source() {
        let text = "  What's the  rate of 3.5%?";
        for t in tokenize(text) {
            assert_eq!(&text[t.start..t.end], t.text);
        }
        assert_eq!(token_texts(text), vec!["What's", "the", "rate", "of", "3.5", "%", "?"]);
    }

    #[test]
    fn sentence_final_period_is_separate() {
        assert_eq!(token_texts("grade 8."), vec!["grade", "8", "."]);
        assert_eq!(token_texts(""), Vec::<String>::new());
    }
}
