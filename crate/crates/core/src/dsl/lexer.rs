#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Fn,
    Let,
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eq,
    Semi,
    /// A character or lexeme outside the language. Kept in the stream so
    /// the parser can attribute it to the enclosing function.
    Invalid(String),
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Fn => "`fn`".into(),
            Tok::Let => "`let`".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(v) => format!("number `{v}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Invalid(s) => format!("invalid input `{s}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

/// Never fails: anything unrecognized becomes `Tok::Invalid`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b' ' | b'\t' | b'\r' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = if word.bytes().any(|b| b.is_ascii_uppercase()) {
                    Tok::Invalid(word.to_string())
                } else {
                    match word {
                        "fn" => Tok::Fn,
                        "let" => Tok::Let,
                        _ => Tok::Ident(word.to_string()),
                    }
                };
                out.push(Token { tok, line });
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lexeme = &text[start..i];
                let tok = match lexeme.parse::<f64>() {
                    Ok(v) if v.is_finite() => Tok::Number(v),
                    _ => Tok::Invalid(lexeme.to_string()),
                };
                out.push(Token { tok, line });
            }
            _ => {
                let (tok, len) = match c {
                    b'(' => (Tok::LParen, 1),
                    b')' => (Tok::RParen, 1),
                    b'{' => (Tok::LBrace, 1),
                    b'}' => (Tok::RBrace, 1),
                    b',' => (Tok::Comma, 1),
                    b'+' => (Tok::Plus, 1),
                    b'-' if bytes.get(i + 1) == Some(&b'>') => (Tok::Arrow, 2),
                    b'-' => (Tok::Minus, 1),
                    b'*' => (Tok::Star, 1),
                    b'/' => (Tok::Slash, 1),
                    b'^' => (Tok::Caret, 1),
                    b'=' => (Tok::Eq, 1),
                    b';' => (Tok::Semi, 1),
                    _ => {
                        let ch = text[i..].chars().next().expect("in bounds");
                        (Tok::Invalid(ch.to_string()), ch.len_utf8())
                    }
                };
                out.push(Token { tok, line });
                i += len;
            }
        }
    }
    out
}
