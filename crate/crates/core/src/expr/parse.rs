use super::{Expr, ExprError, Func};

/// Parse `source` into an [`Expr`]. Every identifier that is not a function
/// name must appear in `allowed_vars`; its index there becomes the
/// variable's positional slot.
pub fn parse(source: &str, allowed_vars: &[&str]) -> Result<Expr, ExprError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0, vars: allowed_vars, end: source.len() };
    if p.tokens.is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let e = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(ExprError::Syntax { offset: tok.offset, message: format!("unexpected {}", tok.kind.describe()) });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Op(c) => format!("`{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => {
                i += 1;
                TokenKind::Op(c)
            }
            '(' => {
                i += 1;
                TokenKind::LParen
            }
            ')' => {
                i += 1;
                TokenKind::RParen
            }
            '0'..='9' | '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ExprError::Syntax { offset: start, message: format!("malformed number `{text}`") })?;
                TokenKind::Number(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                TokenKind::Ident(src[start..i].to_string())
            }
            other => {
                return Err(ExprError::Syntax { offset: start, message: format!("unexpected character `{other}`") })
            }
        };
        out.push(Token { kind, offset: start });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokenKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self) -> ExprError {
        match self.peek() {
            Some(tok) => {
                ExprError::Syntax { offset: tok.offset, message: format!("unexpected {}", tok.kind.describe()) }
            }
            None => ExprError::Syntax { offset: self.end, message: "unexpected end of input".into() },
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            if self.eat_op('+') {
                acc = Expr::add(acc, self.term()?);
            } else if self.eat_op('-') {
                acc = Expr::sub(acc, self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat_op('*') {
                acc = Expr::mul(acc, self.unary()?);
            } else if self.eat_op('/') {
                acc = Expr::div(acc, self.unary()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if !self.eat_op('^') {
            return Ok(base);
        }
        let negative = self.eat_op('-');
        let offset = self.offset();
        match self.next() {
            Some(Token { kind: TokenKind::Number(v), .. }) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                let n = v as i32;
                Ok(Expr::pow(base, if negative { -n } else { n }))
            }
            Some(_) => Err(ExprError::Syntax { offset, message: "exponent must be an integer".into() }),
            None => Err(ExprError::Syntax { offset, message: "unexpected end of input".into() }),
        }
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected());
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                let followed_by_paren = matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. }));
                if let Some(func) = Func::from_name(&name) {
                    if !followed_by_paren {
                        return Err(ExprError::Syntax {
                            offset: self.offset(),
                            message: format!("expected `(` after `{name}`"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::apply(func, arg));
                }
                if followed_by_paren {
                    return Err(ExprError::UnknownFunction { name, offset: tok.offset });
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(slot) => Ok(Expr::var(&name, slot)),
                    None => Err(ExprError::UnknownVariable { name, offset: tok.offset }),
                }
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token { kind: TokenKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(match self.peek() {
                None => ExprError::Syntax { offset: self.end, message: "expected `)`".into() },
                Some(t) => ExprError::Syntax {
                    offset: t.offset,
                    message: format!("expected `)`, found {}", t.kind.describe()),
                },
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_free_vars() {
        let e = parse("x1^2 + x2^2 + (x3+0.5)^2 - 1", &["x1", "x2", "x3"]).unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, ["x1", "x2", "x3"]);
    }

    #[test]
    fn constant_zero() {
        assert_eq!(parse("0", &[]).unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn trailing_operator_reports_end_offset() {
        let err = parse("x1 + ", &["x1"]).unwrap_err();
        assert_eq!(err, ExprError::Syntax { offset: 5, message: "unexpected end of input".into() });
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(parse("x4 + 1", &["x1", "x2", "x3"]), Err(ExprError::UnknownVariable { offset: 0, .. })));
        assert!(matches!(parse("2 * tanh(x1)", &["x1"]), Err(ExprError::UnknownFunction { offset: 4, .. })));
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse("-x^2 + 2*3^2 - 8/4/2", &["x"]).unwrap();
        let v = e.eval(&[3.0][..]).unwrap();
        assert_eq!(v, -9.0 + 18.0 - 1.0);
        let e = parse("x^-2", &["x"]).unwrap();
        assert_eq!(e.eval(&[2.0][..]).unwrap(), 0.25);
    }

    #[test]
    fn non_integer_exponent_rejected() {
        assert!(matches!(parse("x^2.5", &["x"]), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn scientific_literals() {
        let e = parse("1e-3 + 2.5E2", &[]).unwrap();
        assert_eq!(e.as_const(), Some(1e-3 + 2.5e2));
    }

    #[test]
    fn unbalanced_parens() {
        assert!(parse("(x1 + 1", &["x1"]).is_err());
        assert!(parse("x1 + 1)", &["x1"]).is_err());
        assert!(parse("", &[]).is_err());
        assert!(parse("exp x1", &["x1"]).is_err());
    }
}
