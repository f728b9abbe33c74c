use std::sync::Arc;

use super::{Expr, Func, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("exponent at byte {offset} must be an integer constant")]
    NonIntegerExponent { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::NonIntegerExponent { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
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
                let v = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                    offset: start,
                    expected: "a number".into(),
                    found: format!("`{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    expected: "an expression token".into(),
                    found: format!("`{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Arc::new(lhs), Arc::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Arc::new(lhs), Arc::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Arc::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.offset();
        // right-associative: the exponent may itself be a power
        let exponent = self.unary()?;
        let n = const_value(&exponent)
            .filter(|v| v.fract() == 0.0 && v.abs() <= i32::MAX as f64)
            .ok_or(ParseError::NonIntegerExponent { offset: at })?;
        Ok(Expr::Pow(Arc::new(base), n as i32))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { offset: at, name })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Arc::new(arg)))
                } else {
                    Ok(Expr::Var(Var::new(&name)))
                }
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => Err(self.error("a number, variable, function call or `(`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.error("`)`"))
        }
    }
}

fn const_value(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        Expr::Neg(a) => const_value(a).map(|v| -v),
        Expr::Add(a, b) => Some(const_value(a)? + const_value(b)?),
        Expr::Sub(a, b) => Some(const_value(a)? - const_value(b)?),
        Expr::Mul(a, b) => Some(const_value(a)? * const_value(b)?),
        Expr::Div(a, b) => Some(const_value(a)? / const_value(b)?),
        Expr::Pow(a, n) => Some(const_value(a)?.powi(*n)),
        _ => None,
    }
    .filter(|v| v.is_finite())
}

/// Parses an expression. Unknown variables are accepted here and only
/// reported when the expression is evaluated.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(e: Expr) -> Arc<Expr> {
        Arc::new(e)
    }

    #[test]
    fn precedence_and_shapes() {
        assert_eq!(
            parse("t1 + 2*x1").unwrap(),
            Expr::Add(a(Expr::var("t1")), a(Expr::Mul(a(Expr::Num(2.0)), a(Expr::var("x1")))))
        );
        assert_eq!(
            parse("sin(t1)^2").unwrap(),
            Expr::Pow(a(Expr::Call(Func::Sin, a(Expr::var("t1")))), 2)
        );
        assert_eq!(
            parse("-x1^2").unwrap(),
            Expr::Neg(a(Expr::Pow(a(Expr::var("x1")), 2)))
        );
        assert_eq!(parse("2^3^2").unwrap(), Expr::Pow(a(Expr::Num(2.0)), 9));
        assert_eq!(parse("x1^-1").unwrap(), Expr::Pow(a(Expr::var("x1")), -1));
    }

    #[test]
    fn left_associativity() {
        let e = parse("a - b - c").unwrap();
        assert_eq!(
            e,
            Expr::Sub(
                a(Expr::Sub(a(Expr::var("a")), a(Expr::var("b")))),
                a(Expr::var("c"))
            )
        );
        assert_eq!(parse("8/4/2").unwrap().eval(&[]).unwrap(), 1.0);
    }

    #[test]
    fn whitespace_insensitive() {
        assert_eq!(parse(" t1+\t2 * x1 \n").unwrap(), parse("t1 + 2*x1").unwrap());
    }

    #[test]
    fn incomplete_input_offset() {
        let err = parse("1 +").unwrap_err();
        assert_eq!(err.offset(), 3);
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse("foo(x1)").unwrap_err(),
            ParseError::UnknownFunction { offset: 0, .. }
        ));
        assert!(matches!(
            parse("x1^0.5").unwrap_err(),
            ParseError::NonIntegerExponent { offset: 3 }
        ));
        assert!(matches!(parse("x1^t1").unwrap_err(), ParseError::NonIntegerExponent { .. }));
        assert_eq!(parse("(x1").unwrap_err().offset(), 3);
        assert_eq!(parse("x1 x2").unwrap_err().offset(), 3);
        assert_eq!(parse("x1 # 2").unwrap_err().offset(), 3);
        // unknown variables parse fine
        assert!(parse("whatever + 1").is_ok());
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Num(1.5e-3));
        assert_eq!(parse(".25").unwrap(), Expr::Num(0.25));
        assert_eq!(parse("2E2").unwrap(), Expr::Num(200.0));
    }
}
