//! SQL tokens for the SQLite dialect.

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Bare word, kept as written.
    Word(String),
    /// Identifier in backticks, brackets or double quotes.
    Quoted { text: String, double: bool },
    Str(String),
    Num(String),
    Op(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Semi,
    /// `?`, `:name`, `@name` or `$name`.
    Param,
}

impl Tok {
    /// Whether this is the bare word `kw`, case-insensitively.
    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(self, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError(pub String);

fn read_until(chars: &[char], mut i: usize, close: char, escape_doubled: bool) -> Result<(String, usize), LexError> {
    let mut out = String::new();
    while i < chars.len() {
        if chars[i] == close {
            if escape_doubled && chars.get(i + 1) == Some(&close) {
                out.push(close);
                i += 2;
                continue;
            }
            return Ok((out, i + 1));
        }
        out.push(chars[i]);
        i += 1;
    }
    Err(LexError(format!("unterminated {close}")))
}

pub fn lex(sql: &str) -> Result<Vec<Tok>, LexError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            _ if c.is_whitespace() => i += 1,
            '-' if next == Some('-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if next == Some('*') => {
                i += 2;
                while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                    i += 1;
                }
                i = (i + 2).min(chars.len());
            }
            '\'' => {
                let (s, j) = read_until(&chars, i + 1, '\'', true)?;
                toks.push(Tok::Str(s));
                i = j;
            }
            '"' | '`' => {
                let (s, j) = read_until(&chars, i + 1, c, true)?;
                toks.push(Tok::Quoted { text: s, double: c == '"' });
                i = j;
            }
            '[' => {
                let (s, j) = read_until(&chars, i + 1, ']', false)?;
                toks.push(Tok::Quoted { text: s, double: false });
                i = j;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            ';' => {
                toks.push(Tok::Semi);
                i += 1;
            }
            '.' if !next.is_some_and(|n| n.is_ascii_digit()) => {
                toks.push(Tok::Dot);
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                    let exp = matches!(chars[i], 'e' | 'E') && matches!(chars.get(i + 1), Some('+' | '-'));
                    i += if exp { 2 } else { 1 };
                }
                toks.push(Tok::Num(chars[start..i.min(chars.len())].iter().collect()));
            }
            _ if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                    i += 1;
                }
                toks.push(Tok::Word(chars[start..i].iter().collect()));
            }
            '?' | ':' | '@' | '$' => {
                i += 1;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Param);
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let op = match two.as_str() {
                    "<=" | ">=" | "<>" | "!=" | "==" | "||" | "<<" | ">>" | "->" => two,
                    _ if "=<>+-*/%&|~".contains(c) => c.to_string(),
                    _ => return Err(LexError(format!("unexpected character {c:?}"))),
                };
                i += op.chars().count();
                if op == "->" && chars.get(i) == Some(&'>') {
                    i += 1;
                }
                toks.push(Tok::Op(op));
            }
        }
    }
    Ok(toks)
}
