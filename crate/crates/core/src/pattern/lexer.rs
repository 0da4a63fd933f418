//! Hand-rolled lexer for the rule DSL. `#` starts a line comment.

use super::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Lowercase-initial identifier (event type or string constant).
    Ident(String),
    /// Uppercase-initial identifier (variable).
    Var(String),
    Underscore,
    Int(i64),
    Float(f64),
    Str(String),
    True,
    False,
    // keywords
    And,
    Not,
    Where,
    Emit,
    Within,
    // punctuation
    Define,    // ::=
    Prefix,    // ::
    AltSep,    // ;;
    Semi,      // ;
    Pipe,      // |
    Star,      // *
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    EqEq,
    Ne,
    Le,
    Ge,
    Lt,
    Gt,
    Assign, // single '=' (equality in predicates, definition in emit)
    Plus,
    Minus,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0usize;

    let err = |line, col, msg: String| ParseError::Syntax {
        pos: Pos { line, col },
        message: msg,
    };

    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos { line, col };
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => {
                col += 1;
                i += 1;
            }
            '#' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            ':' => {
                if i + 2 < bytes.len() && bytes[i + 1] == ':' && bytes[i + 2] == '=' {
                    out.push(Token { tok: Tok::Define, pos });
                    i += 3;
                    col += 3;
                } else if i + 1 < bytes.len() && bytes[i + 1] == ':' {
                    out.push(Token { tok: Tok::Prefix, pos });
                    i += 2;
                    col += 2;
                } else {
                    return Err(err(line, col, "expected '::' or '::='".into()));
                }
            }
            ';' => {
                if i + 1 < bytes.len() && bytes[i + 1] == ';' {
                    out.push(Token { tok: Tok::AltSep, pos });
                    i += 2;
                    col += 2;
                } else {
                    out.push(Token { tok: Tok::Semi, pos });
                    i += 1;
                    col += 1;
                }
            }
            '|' => {
                out.push(Token { tok: Tok::Pipe, pos });
                i += 1;
                col += 1;
            }
            '*' => {
                out.push(Token { tok: Tok::Star, pos });
                i += 1;
                col += 1;
            }
            '(' => {
                out.push(Token { tok: Tok::LParen, pos });
                i += 1;
                col += 1;
            }
            ')' => {
                out.push(Token { tok: Tok::RParen, pos });
                i += 1;
                col += 1;
            }
            '{' => {
                out.push(Token { tok: Tok::LBrace, pos });
                i += 1;
                col += 1;
            }
            '}' => {
                out.push(Token { tok: Tok::RBrace, pos });
                i += 1;
                col += 1;
            }
            '[' => {
                out.push(Token { tok: Tok::LBracket, pos });
                i += 1;
                col += 1;
            }
            ']' => {
                out.push(Token { tok: Tok::RBracket, pos });
                i += 1;
                col += 1;
            }
            ',' => {
                out.push(Token { tok: Tok::Comma, pos });
                i += 1;
                col += 1;
            }
            '+' => {
                out.push(Token { tok: Tok::Plus, pos });
                i += 1;
                col += 1;
            }
            '-' => {
                out.push(Token { tok: Tok::Minus, pos });
                i += 1;
                col += 1;
            }
            '=' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    out.push(Token { tok: Tok::EqEq, pos });
                    i += 2;
                    col += 2;
                } else {
                    out.push(Token { tok: Tok::Assign, pos });
                    i += 1;
                    col += 1;
                }
            }
            '!' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    out.push(Token { tok: Tok::Ne, pos });
                    i += 2;
                    col += 2;
                } else {
                    return Err(err(line, col, "expected '!='".into()));
                }
            }
            '<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    out.push(Token { tok: Tok::Le, pos });
                    i += 2;
                    col += 2;
                } else {
                    out.push(Token { tok: Tok::Lt, pos });
                    i += 1;
                    col += 1;
                }
            }
            '>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == '=' {
                    out.push(Token { tok: Tok::Ge, pos });
                    i += 2;
                    col += 2;
                } else {
                    out.push(Token { tok: Tok::Gt, pos });
                    i += 1;
                    col += 1;
                }
            }
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut c2 = col + 1;
                loop {
                    if j >= bytes.len() {
                        return Err(err(line, col, "unterminated string literal".into()));
                    }
                    if bytes[j] == '"' {
                        break;
                    }
                    if bytes[j] == '\n' {
                        return Err(err(line, col, "unterminated string literal".into()));
                    }
                    s.push(bytes[j]);
                    j += 1;
                    c2 += 1;
                }
                out.push(Token { tok: Tok::Str(s), pos });
                i = j + 1;
                col = c2 + 1;
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                let mut has_dot = false;
                while j < bytes.len()
                    && (bytes[j].is_ascii_digit() || (bytes[j] == '.' && !has_dot))
                {
                    if bytes[j] == '.' {
                        // '..' would belong to some other construct; stop before it
                        if j + 1 < bytes.len() && !bytes[j + 1].is_ascii_digit() {
                            break;
                        }
                        has_dot = true;
                    }
                    j += 1;
                }
                let s: String = bytes[i..j].iter().collect();
                let tok = if has_dot {
                    Tok::Float(s.parse().map_err(|_| {
                        err(line, col, format!("bad float literal '{s}'"))
                    })?)
                } else {
                    Tok::Int(s.parse().map_err(|_| {
                        err(line, col, format!("bad integer literal '{s}'"))
                    })?)
                };
                out.push(Token { tok, pos });
                col += (j - i) as u32;
                i = j;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_alphanumeric() || bytes[j] == '_') {
                    j += 1;
                }
                let s: String = bytes[i..j].iter().collect();
                let tok = match s.as_str() {
                    "_" => Tok::Underscore,
                    "and" => Tok::And,
                    "not" => Tok::Not,
                    "where" => Tok::Where,
                    "emit" => Tok::Emit,
                    "within" => Tok::Within,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => {
                        let first = s.chars().next().unwrap();
                        if first.is_uppercase() || first == '_' {
                            Tok::Var(s)
                        } else {
                            Tok::Ident(s)
                        }
                    }
                };
                out.push(Token { tok, pos });
                col += (j - i) as u32;
                i = j;
            }
            other => {
                return Err(err(line, col, format!("unexpected character '{other}'")));
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}
