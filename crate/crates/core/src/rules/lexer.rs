use super::{ParseError, Position};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Real(f64),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Assign,
    Cmp(super::CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    Semi,
    Dot,
    Colon,
    Comma,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Position,
}

const FORBIDDEN_WORDS: &[(&str, &str)] = &[
    ("and", "boolean `and` (nest conditionals instead)"),
    ("or", "boolean `or` (use separate conditionals)"),
    ("not", "boolean `not` (compare with `== false`)"),
    ("try", "try/except blocks"),
    ("except", "try/except blocks"),
    ("lambda", "lambda expressions"),
    ("def", "function definitions"),
];

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! advance {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Position { line, column: col };
        if c.is_whitespace() {
            advance!();
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                advance!();
            }
            continue;
        }
        let single = |t: Tok| Token { tok: t, pos };
        match c {
            '{' => out.push(single(Tok::LBrace)),
            '}' => out.push(single(Tok::RBrace)),
            '[' => out.push(single(Tok::LBracket)),
            ']' => out.push(single(Tok::RBracket)),
            '(' => out.push(single(Tok::LParen)),
            ')' => out.push(single(Tok::RParen)),
            '+' => out.push(single(Tok::Plus)),
            '-' => out.push(single(Tok::Minus)),
            '*' => out.push(single(Tok::Star)),
            '/' => out.push(single(Tok::Slash)),
            ';' => out.push(single(Tok::Semi)),
            '.' if !chars.get(i + 1).is_some_and(char::is_ascii_digit) => {
                out.push(single(Tok::Dot))
            }
            ':' => out.push(single(Tok::Colon)),
            ',' => out.push(single(Tok::Comma)),
            '&' | '|' if chars.get(i + 1) == Some(&c) => {
                return Err(ParseError::ForbiddenConstruct {
                    pos,
                    construct: format!("boolean `{c}{c}`"),
                })
            }
            '=' | '!' | '<' | '>' => {
                let next_eq = chars.get(i + 1) == Some(&'=');
                use super::CmpOp::*;
                let tok = match (c, next_eq) {
                    ('=', true) => Tok::Cmp(Eq),
                    ('=', false) => Tok::Assign,
                    ('!', true) => Tok::Cmp(Ne),
                    ('!', false) => {
                        return Err(ParseError::ForbiddenConstruct {
                            pos,
                            construct: "boolean `!` (compare with `== false`)".into(),
                        })
                    }
                    ('<', true) => Tok::Cmp(Le),
                    ('<', false) => Tok::Cmp(Lt),
                    ('>', true) => Tok::Cmp(Ge),
                    _ => Tok::Cmp(Gt),
                };
                if next_eq {
                    advance!();
                }
                out.push(Token { tok, pos });
            }
            '"' | '\'' => {
                let quote = c;
                advance!();
                let mut s = String::new();
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(ParseError::syntax(pos, "unterminated string literal"));
                    };
                    if ch == '\n' {
                        return Err(ParseError::syntax(pos, "unterminated string literal"));
                    }
                    if ch == quote {
                        break;
                    }
                    if ch == '\\' {
                        advance!();
                        match chars.get(i) {
                            Some('\\') => s.push('\\'),
                            Some('"') => s.push('"'),
                            Some('\'') => s.push('\''),
                            Some('n') => s.push('\n'),
                            _ => return Err(ParseError::syntax(pos, "invalid escape in string")),
                        }
                    } else {
                        s.push(ch);
                    }
                    advance!();
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    pos,
                });
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                let mut is_real = false;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    advance!();
                }
                if i < chars.len() && chars[i] == '.' {
                    is_real = true;
                    advance!();
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance!();
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let save = (i, line, col);
                    advance!();
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        advance!();
                    }
                    if i < chars.len() && chars[i].is_ascii_digit() {
                        is_real = true;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            advance!();
                        }
                    } else {
                        (i, line, col) = save;
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                let tok = if is_real {
                    Tok::Real(
                        text.parse()
                            .map_err(|_| ParseError::syntax(pos, format!("bad number `{text}`")))?,
                    )
                } else {
                    Tok::Int(text.parse().map_err(|_| {
                        ParseError::syntax(pos, format!("integer `{text}` out of range"))
                    })?)
                };
                out.push(Token { tok, pos });
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    advance!();
                }
                let word: String = chars[start..i].iter().collect();
                if let Some((_, what)) = FORBIDDEN_WORDS.iter().find(|(w, _)| *w == word) {
                    return Err(ParseError::ForbiddenConstruct {
                        pos,
                        construct: what.to_string(),
                    });
                }
                out.push(Token {
                    tok: Tok::Ident(word),
                    pos,
                });
                continue;
            }
            other => {
                return Err(ParseError::syntax(
                    pos,
                    format!("unexpected character `{other}`"),
                ));
            }
        }
        advance!();
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Position { line, column: col },
    });
    Ok(out)
}
