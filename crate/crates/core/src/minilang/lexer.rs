//! Tokenizer for MiniLang source text.
//!
//! Comments (`//` line and non-nesting `/* */` block) and whitespace are
//! skipped; every token keeps its 1-based line/column span and byte range so
//! that later stages can splice source text without re-printing it.

use super::ParseError;
use super::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Ident,
    Int,
    // keywords
    Fn,
    Let,
    If,
    Else,
    While,
    Return,
    True,
    False,
    TyInt,
    TyBool,
    TyUnit,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Colon,
    Arrow,
    Assign,
    PlusAssign,
    MinusAssign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    NotEq,
    AndAnd,
    OrOr,
    Bang,
}

impl TokenKind {
    pub fn describe(self) -> &'static str {
        use TokenKind::*;
        match self {
            Ident => "identifier",
            Int => "integer literal",
            Fn => "`fn`",
            Let => "`let`",
            If => "`if`",
            Else => "`else`",
            While => "`while`",
            Return => "`return`",
            True => "`true`",
            False => "`false`",
            TyInt => "`int`",
            TyBool => "`bool`",
            TyUnit => "`unit`",
            LParen => "`(`",
            RParen => "`)`",
            LBrace => "`{`",
            RBrace => "`}`",
            Comma => "`,`",
            Semi => "`;`",
            Colon => "`:`",
            Arrow => "`->`",
            Assign => "`=`",
            PlusAssign => "`+=`",
            MinusAssign => "`-=`",
            Plus => "`+`",
            Minus => "`-`",
            Star => "`*`",
            Slash => "`/`",
            Percent => "`%`",
            Lt => "`<`",
            Le => "`<=`",
            Gt => "`>`",
            Ge => "`>=`",
            EqEq => "`==`",
            NotEq => "`!=`",
            AndAnd => "`&&`",
            OrOr => "`||`",
            Bang => "`!`",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
    /// Byte range `[start, end)` in the source text.
    pub start: usize,
    pub end: usize,
}

fn keyword(word: &str) -> Option<TokenKind> {
    Some(match word {
        "fn" => TokenKind::Fn,
        "let" => TokenKind::Let,
        "if" => TokenKind::If,
        "else" => TokenKind::Else,
        "while" => TokenKind::While,
        "return" => TokenKind::Return,
        "true" => TokenKind::True,
        "false" => TokenKind::False,
        "int" => TokenKind::TyInt,
        "bool" => TokenKind::TyBool,
        "unit" => TokenKind::TyUnit,
        _ => return None,
    })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

/// Split `src` into tokens, dropping comments and whitespace.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '/' && cur.peek2() == Some('/') {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        if c == '/' && cur.peek2() == Some('*') {
            let (line, col) = (cur.line, cur.col);
            cur.bump();
            cur.bump();
            loop {
                match cur.peek() {
                    None => return Err(ParseError::new(line, col, "end of block comment `*/`", "end of input")),
                    Some('*') if cur.peek2() == Some('/') => {
                        cur.bump();
                        cur.bump();
                        break;
                    }
                    Some(_) => {
                        cur.bump();
                    }
                }
            }
            continue;
        }

        let (start, line, col) = (cur.pos, cur.line, cur.col);
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            keyword(&src[start..cur.pos]).unwrap_or(TokenKind::Ident)
        } else if c.is_ascii_digit() {
            while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                cur.bump();
            }
            if matches!(cur.peek(), Some(c) if c.is_ascii_alphabetic() || c == '_') {
                return Err(ParseError::new(cur.line, cur.col, "end of integer literal", "identifier character"));
            }
            TokenKind::Int
        } else {
            let two = cur.peek2();
            let (kind, len) = match (c, two) {
                ('-', Some('>')) => (TokenKind::Arrow, 2),
                ('+', Some('=')) => (TokenKind::PlusAssign, 2),
                ('-', Some('=')) => (TokenKind::MinusAssign, 2),
                ('<', Some('=')) => (TokenKind::Le, 2),
                ('>', Some('=')) => (TokenKind::Ge, 2),
                ('=', Some('=')) => (TokenKind::EqEq, 2),
                ('!', Some('=')) => (TokenKind::NotEq, 2),
                ('&', Some('&')) => (TokenKind::AndAnd, 2),
                ('|', Some('|')) => (TokenKind::OrOr, 2),
                ('(', _) => (TokenKind::LParen, 1),
                (')', _) => (TokenKind::RParen, 1),
                ('{', _) => (TokenKind::LBrace, 1),
                ('}', _) => (TokenKind::RBrace, 1),
                (',', _) => (TokenKind::Comma, 1),
                (';', _) => (TokenKind::Semi, 1),
                (':', _) => (TokenKind::Colon, 1),
                ('=', _) => (TokenKind::Assign, 1),
                ('+', _) => (TokenKind::Plus, 1),
                ('-', _) => (TokenKind::Minus, 1),
                ('*', _) => (TokenKind::Star, 1),
                ('/', _) => (TokenKind::Slash, 1),
                ('%', _) => (TokenKind::Percent, 1),
                ('<', _) => (TokenKind::Lt, 1),
                ('>', _) => (TokenKind::Gt, 1),
                ('!', _) => (TokenKind::Bang, 1),
                (other, _) => return Err(ParseError::new(line, col, "token", &format!("unexpected character {other:?}"))),
            };
            for _ in 0..len {
                cur.bump();
            }
            kind
        };
        out.push(Token {
            kind,
            text: src[start..cur.pos].to_string(),
            span: Span {
                start_line: line,
                start_col: col,
                end_line: cur.line,
                end_col: cur.col,
            },
            start,
            end: cur.pos,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn longest_match_operators() {
        use TokenKind::*;
        assert_eq!(kinds("a<=b->c"), vec![Ident, Le, Ident, Arrow, Ident]);
        assert_eq!(kinds("x+=1;y-=2"), vec![Ident, PlusAssign, Int, Semi, Ident, MinusAssign, Int]);
        assert_eq!(kinds("--1"), vec![Minus, Minus, Int]);
    }

    #[test]
    fn comments_are_skipped() {
        let toks = tokenize("a /* b \n c */ d // e\nf").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["a", "d", "f"]);
        assert_eq!(toks[2].span.start_line, 3);
    }

    #[test]
    fn unterminated_block_comment() {
        let err = tokenize("fn /* oops").unwrap_err();
        assert_eq!((err.line, err.column), (1, 4));
    }

    #[test]
    fn columns_count_characters() {
        let toks = tokenize("/*é*/ x").unwrap();
        assert_eq!(toks[0].span.start_col, 7);
        assert_eq!(toks[0].start, 7);
    }
}
