use super::FormulaError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Tilde,
    Pipe,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eq,
    Colon,
    Dot,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    /// Byte offset of the first character.
    pub pos: usize,
    pub end: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, FormulaError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '~' => Some(Tok::Tilde),
            '|' => Some(Tok::Pipe),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '=' => Some(Tok::Eq),
            ':' => Some(Tok::Colon),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, pos, end: pos + 1 });
            i += 1;
            continue;
        }
        let starts_number =
            c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|(_, d)| d.is_ascii_digit()));
        if starts_number {
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let end = chars.get(i).map_or(text.len(), |(p, _)| *p);
            let s = &text[pos..end];
            let v: f64 = s.parse().map_err(|_| FormulaError::Syntax {
                position: pos,
                expected: "a number".into(),
                found: format!("`{s}`"),
            })?;
            out.push(Token { tok: Tok::Num(v), pos, end });
            continue;
        }
        if c == '.' {
            out.push(Token { tok: Tok::Dot, pos, end: pos + 1 });
            i += 1;
            continue;
        }
        if is_ident_start(c) {
            while i < chars.len() && is_ident_char(chars[i].1) {
                i += 1;
            }
            let end = chars.get(i).map_or(text.len(), |(p, _)| *p);
            out.push(Token {
                tok: Tok::Ident(text[pos..end].to_string()),
                pos,
                end,
            });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let start = i;
            while i < chars.len() && chars[i].1 != quote {
                i += 1;
            }
            if i >= chars.len() {
                return Err(FormulaError::Syntax {
                    position: pos,
                    expected: "closing quote".into(),
                    found: "end of input".into(),
                });
            }
            let s_start = chars[start - 1].0 + 1;
            let s_end = chars[i].0;
            i += 1;
            let end = chars.get(i).map_or(text.len(), |(p, _)| *p);
            out.push(Token {
                tok: Tok::Str(text[s_start..s_end].to_string()),
                pos,
                end,
            });
            continue;
        }
        return Err(FormulaError::Syntax {
            position: pos,
            expected: "a token".into(),
            found: format!("`{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: text.len(),
        end: text.len(),
    });
    Ok(out)
}

/// Recursive-descent cursor over a token list.
pub struct Cursor {
    toks: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub fn new(text: &str) -> Result<Self, FormulaError> {
        Ok(Cursor {
            toks: tokenize(text)?,
            at: 0,
        })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.at + k).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    pub fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    pub fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn error(&self, expected: &str) -> FormulaError {
        FormulaError::Syntax {
            position: self.pos(),
            expected: expected.to_string(),
            found: self.peek().describe(),
        }
    }

    pub fn expect(&mut self, tok: &Tok, expected: &str) -> Result<Token, FormulaError> {
        if self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error(expected))
        }
    }

    pub fn ident(&mut self, expected: &str) -> Result<(String, usize), FormulaError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.pos();
                self.bump();
                Ok((s, pos))
            }
            _ => Err(self.error(expected)),
        }
    }

    /// A name argument: identifier or quoted string.
    pub fn name_or_string(&mut self, expected: &str) -> Result<String, FormulaError> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(expected)),
        }
    }

    /// Possibly signed numeric literal.
    pub fn number(&mut self, expected: &str) -> Result<f64, FormulaError> {
        let neg = self.eat(&Tok::Minus);
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            Tok::Ident(ref s) if s == "Inf" => {
                self.bump();
                Ok(if neg { f64::NEG_INFINITY } else { f64::INFINITY })
            }
            _ => Err(self.error(expected)),
        }
    }

    pub fn finish(&mut self) -> Result<(), FormulaError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error("end of input"))
        }
    }
}
