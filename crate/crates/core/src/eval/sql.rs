//! A tolerant SQLite `SELECT` parser and the schema/value entity extractor
//! built on it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, Tok};
use crate::db::SchemaCatalog;

const MAX_DEPTH: usize = 200;

const RESERVED: &[&str] = &[
    "all", "and", "as", "asc", "between", "by", "case", "cast", "collate", "cross", "desc", "distinct", "else",
    "end", "escape", "except", "exists", "filter", "from", "full", "glob", "group", "having", "in", "indexed",
    "inner", "intersect", "is", "isnull", "join", "left", "like", "limit", "match", "natural", "not", "notnull",
    "null", "offset", "on", "or", "order", "outer", "over", "regexp", "right", "select", "then", "union", "using",
    "values", "when", "where", "window", "with",
];

fn reserved(w: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(w))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lit {
    Str(String),
    Num(String),
    /// NULL, TRUE, CURRENT_DATE and the like.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column { qualifier: Option<String>, name: String, double_quoted: bool },
    Literal(Lit),
    Param,
    Star,
    QualifiedStar(String),
    Neg(Box<Expr>),
    Unary(Box<Expr>),
    Binary { op: String, left: Box<Expr>, right: Box<Expr> },
    Between { expr: Box<Expr>, low: Box<Expr>, high: Box<Expr> },
    InList { expr: Box<Expr>, list: Vec<Expr> },
    InQuery { expr: Box<Expr>, query: Box<Query> },
    Func { name: String, args: Vec<Expr> },
    Case { operand: Option<Box<Expr>>, branches: Vec<(Expr, Expr)>, otherwise: Option<Box<Expr>> },
    Subquery(Box<Query>),
    Tuple(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FromItem {
    Table { name: String, alias: Option<String> },
    Subquery { query: Box<Query>, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Select {
    pub items: Vec<SelectItem>,
    pub from: Vec<FromItem>,
    /// `ON` conditions of the joins in `from`.
    pub join_on: Vec<Expr>,
    /// `USING` columns with the index of the right-hand item in `from`.
    pub join_using: Vec<(usize, Vec<String>)>,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub values: Vec<Vec<Expr>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cte {
    pub name: String,
    pub columns: Vec<String>,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Query {
    pub ctes: Vec<Cte>,
    pub body: Vec<Select>,
    pub order_by: Vec<Expr>,
    pub limit: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError(pub String);

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    depth: usize,
}

type PResult<T> = Result<T, ParseError>;

fn err<T>(msg: impl Into<String>) -> PResult<T> {
    Err(ParseError(msg.into()))
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_kw(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            err(format!("expected {kw} at token {}", self.pos))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            err(format!("expected {tok:?} at token {}", self.pos))
        }
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if o == op)
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return err("nesting too deep");
        }
        Ok(())
    }

    fn at_query_start(&self) -> bool {
        self.at_kw("select") || self.at_kw("with") || self.at_kw("values")
    }

    /// An identifier: a non-reserved word or any quoted name.
    fn name(&mut self) -> PResult<String> {
        match self.next() {
            Some(Tok::Word(w)) if !reserved(&w) => Ok(w),
            Some(Tok::Quoted { text, .. }) => Ok(text),
            other => err(format!("expected a name, found {other:?}")),
        }
    }

    fn opt_alias(&mut self) -> PResult<Option<String>> {
        if self.eat_kw("as") {
            return match self.next() {
                Some(Tok::Word(w)) => Ok(Some(w)),
                Some(Tok::Quoted { text, .. } | Tok::Str(text)) => Ok(Some(text)),
                other => err(format!("expected an alias, found {other:?}")),
            };
        }
        match self.peek() {
            Some(Tok::Word(w)) if !reserved(w) => Ok(Some(self.name()?)),
            Some(Tok::Quoted { .. }) => Ok(Some(self.name()?)),
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Some(s))
            }
            _ => Ok(None),
        }
    }

    fn query(&mut self) -> PResult<Query> {
        self.enter()?;
        let mut q = Query::default();
        if self.eat_kw("with") {
            self.eat_kw("recursive");
            loop {
                let name = self.name()?;
                let mut columns = Vec::new();
                if self.eat(&Tok::LParen) {
                    loop {
                        columns.push(self.name()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(&Tok::RParen)?;
                }
                self.expect_kw("as")?;
                if self.eat_kw("not") {
                    self.expect_kw("materialized")?;
                } else {
                    self.eat_kw("materialized");
                }
                self.expect(&Tok::LParen)?;
                let query = self.query()?;
                self.expect(&Tok::RParen)?;
                q.ctes.push(Cte { name, columns, query });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        q.body.push(self.select_core()?);
        loop {
            if self.eat_kw("union") {
                self.eat_kw("all");
            } else if !(self.eat_kw("intersect") || self.eat_kw("except")) {
                break;
            }
            q.body.push(self.select_core()?);
        }
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            q.order_by = self.ordering_list()?;
        }
        if self.eat_kw("limit") {
            q.limit.push(self.expr()?);
            if self.eat_kw("offset") || self.eat(&Tok::Comma) {
                q.limit.push(self.expr()?);
            }
        }
        self.depth -= 1;
        Ok(q)
    }

    fn ordering_list(&mut self) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        loop {
            out.push(self.expr()?);
            if !self.eat_kw("asc") {
                self.eat_kw("desc");
            }
            if self.eat_kw("nulls") {
                self.next();
            }
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn expr_list(&mut self) -> PResult<Vec<Expr>> {
        let mut out = vec![self.expr()?];
        while self.eat(&Tok::Comma) {
            out.push(self.expr()?);
        }
        Ok(out)
    }

    fn select_core(&mut self) -> PResult<Select> {
        let mut s = Select::default();
        if self.eat_kw("values") {
            loop {
                self.expect(&Tok::LParen)?;
                s.values.push(self.expr_list()?);
                self.expect(&Tok::RParen)?;
                if !self.eat(&Tok::Comma) {
                    return Ok(s);
                }
            }
        }
        self.expect_kw("select")?;
        if !self.eat_kw("distinct") {
            self.eat_kw("all");
        }
        loop {
            let expr = self.expr()?;
            let alias = if matches!(expr, Expr::Star | Expr::QualifiedStar(_)) { None } else { self.opt_alias()? };
            s.items.push(SelectItem { expr, alias });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        if self.eat_kw("from") {
            self.parse_from(&mut s)?;
        }
        if self.eat_kw("where") {
            s.filter = Some(self.expr()?);
        }
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            s.group_by = self.expr_list()?;
        }
        if self.eat_kw("having") {
            s.having = Some(self.expr()?);
        }
        if self.eat_kw("window") {
            loop {
                self.name()?;
                self.expect_kw("as")?;
                self.window_spec(&mut Vec::new())?;
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        Ok(s)
    }

    fn join_operator(&mut self) -> bool {
        let start = self.pos;
        self.eat_kw("natural");
        if self.eat_kw("left") || self.eat_kw("right") || self.eat_kw("full") {
            self.eat_kw("outer");
        } else if !self.eat_kw("inner") {
            self.eat_kw("cross");
        }
        if self.eat_kw("join") {
            true
        } else {
            self.pos = start;
            false
        }
    }

    fn parse_from(&mut self, s: &mut Select) -> PResult<()> {
        self.parse_from_item(s)?;
        loop {
            if !(self.eat(&Tok::Comma) || self.join_operator()) {
                return Ok(());
            }
            self.parse_from_item(s)?;
            if self.eat_kw("on") {
                let on = self.expr()?;
                s.join_on.push(on);
            } else if self.eat_kw("using") {
                self.expect(&Tok::LParen)?;
                let mut cols = vec![self.name()?];
                while self.eat(&Tok::Comma) {
                    cols.push(self.name()?);
                }
                self.expect(&Tok::RParen)?;
                s.join_using.push((s.from.len() - 1, cols));
            }
        }
    }

    fn parse_from_item(&mut self, s: &mut Select) -> PResult<()> {
        self.enter()?;
        if self.eat(&Tok::LParen) {
            if self.at_query_start() {
                let query = Box::new(self.query()?);
                self.expect(&Tok::RParen)?;
                let alias = self.opt_alias()?;
                s.from.push(FromItem::Subquery { query, alias });
            } else {
                self.parse_from(s)?;
                self.expect(&Tok::RParen)?;
            }
        } else {
            let mut name = self.name()?;
            if self.eat(&Tok::Dot) {
                name = self.name()?;
            }
            if self.eat(&Tok::LParen) && !self.eat(&Tok::RParen) {
                self.expr_list()?;
                self.expect(&Tok::RParen)?;
            }
            let alias = self.opt_alias()?;
            if self.eat_kw("indexed") {
                self.expect_kw("by")?;
                self.name()?;
            } else if self.at_kw("not") && self.peek_at(1).is_some_and(|t| t.is_kw("indexed")) {
                self.pos += 2;
            }
            s.from.push(FromItem::Table { name, alias });
        }
        self.depth -= 1;
        Ok(())
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.or_expr();
        self.depth -= 1;
        e
    }

    fn binary(op: &str, left: Expr, right: Expr) -> Expr {
        Expr::Binary { op: op.to_string(), left: Box::new(left), right: Box::new(right) }
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Self::binary("OR", left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Self::binary("AND", left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            self.enter()?;
            let inner = self.not_expr()?;
            self.depth -= 1;
            return Ok(Expr::Unary(Box::new(inner)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let mut left = self.bitwise()?;
        loop {
            if let Some(Tok::Op(op)) = self.peek() {
                if matches!(op.as_str(), "=" | "==" | "!=" | "<>" | "<" | "<=" | ">" | ">=") {
                    let op = op.clone();
                    self.pos += 1;
                    let right = self.bitwise()?;
                    left = Self::binary(&op, left, right);
                    continue;
                }
            }
            if self.eat_kw("isnull") || self.eat_kw("notnull") {
                left = Expr::Unary(Box::new(left));
                continue;
            }
            if self.at_kw("not") && self.peek_at(1).is_some_and(|t| t.is_kw("null")) {
                self.pos += 2;
                left = Expr::Unary(Box::new(left));
                continue;
            }
            if self.eat_kw("is") {
                self.eat_kw("not");
                if self.eat_kw("distinct") {
                    self.expect_kw("from")?;
                }
                let right = self.bitwise()?;
                left = Self::binary("IS", left, right);
                continue;
            }
            let negated = self.at_kw("not")
                && self.peek_at(1).is_some_and(|t| ["in", "like", "glob", "regexp", "match", "between"].iter().any(|k| t.is_kw(k)));
            if negated {
                self.pos += 1;
            }
            if self.eat_kw("between") {
                let low = self.bitwise()?;
                self.expect_kw("and")?;
                let high = self.bitwise()?;
                left = Expr::Between { expr: Box::new(left), low: Box::new(low), high: Box::new(high) };
                continue;
            }
            if self.eat_kw("in") {
                if self.eat(&Tok::LParen) {
                    if self.at_query_start() {
                        let query = Box::new(self.query()?);
                        self.expect(&Tok::RParen)?;
                        left = Expr::InQuery { expr: Box::new(left), query };
                    } else {
                        let list = if self.eat(&Tok::RParen) {
                            Vec::new()
                        } else {
                            let l = self.expr_list()?;
                            self.expect(&Tok::RParen)?;
                            l
                        };
                        left = Expr::InList { expr: Box::new(left), list };
                    }
                } else {
                    let mut name = self.name()?;
                    if self.eat(&Tok::Dot) {
                        name = self.name()?;
                    }
                    left = Self::binary("IN", left, Expr::Column { qualifier: None, name, double_quoted: false });
                }
                continue;
            }
            let like = ["like", "glob", "regexp", "match"].into_iter().find(|k| self.at_kw(k));
            if let Some(k) = like {
                self.pos += 1;
                let right = self.bitwise()?;
                left = Self::binary(&k.to_uppercase(), left, right);
                if self.eat_kw("escape") {
                    self.bitwise()?;
                }
                continue;
            }
            if negated {
                return err("dangling NOT");
            }
            return Ok(left);
        }
    }

    fn bitwise(&mut self) -> PResult<Expr> {
        let mut left = self.additive()?;
        while let Some(Tok::Op(op)) = self.peek() {
            if !matches!(op.as_str(), "&" | "|" | "<<" | ">>") {
                break;
            }
            let op = op.clone();
            self.pos += 1;
            let right = self.additive()?;
            left = Self::binary(&op, left, right);
        }
        Ok(left)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut left = self.multiplicative()?;
        while self.at_op("+") || self.at_op("-") {
            let Some(Tok::Op(op)) = self.next() else { unreachable!() };
            let right = self.multiplicative()?;
            left = Self::binary(&op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut left = self.concat()?;
        while self.at_op("*") || self.at_op("/") || self.at_op("%") {
            let Some(Tok::Op(op)) = self.next() else { unreachable!() };
            let right = self.concat()?;
            left = Self::binary(&op, left, right);
        }
        Ok(left)
    }

    fn concat(&mut self) -> PResult<Expr> {
        let mut left = self.unary()?;
        while self.at_op("||") || self.at_op("->") {
            let Some(Tok::Op(op)) = self.next() else { unreachable!() };
            let right = self.unary()?;
            left = Self::binary(&op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.at_op("-") || self.at_op("+") || self.at_op("~") {
            let Some(Tok::Op(op)) = self.next() else { unreachable!() };
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(if op == "-" { Expr::Neg(Box::new(inner)) } else { Expr::Unary(Box::new(inner)) });
        }
        let e = self.primary()?;
        while self.eat_kw("collate") {
            self.name()?;
        }
        Ok(e)
    }

    fn window_spec(&mut self, out: &mut Vec<Expr>) -> PResult<()> {
        if !self.eat(&Tok::LParen) {
            self.name()?;
            return Ok(());
        }
        loop {
            match self.peek() {
                None => return err("unterminated window"),
                Some(Tok::RParen) => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(t) if t.is_kw("partition") => {
                    self.pos += 1;
                    self.expect_kw("by")?;
                    out.extend(self.expr_list()?);
                }
                Some(t) if t.is_kw("order") => {
                    self.pos += 1;
                    self.expect_kw("by")?;
                    out.extend(self.ordering_list()?);
                }
                Some(_) => {
                    self.pos += 1;
                }
            }
        }
    }

    fn function(&mut self, name: String) -> PResult<Expr> {
        let mut args = Vec::new();
        if self.at_op("*") {
            self.pos += 1;
            args.push(Expr::Star);
        } else if !matches!(self.peek(), Some(Tok::RParen)) {
            self.eat_kw("distinct");
            args = self.expr_list()?;
            if self.eat_kw("order") {
                self.expect_kw("by")?;
                args.extend(self.ordering_list()?);
            }
        }
        self.expect(&Tok::RParen)?;
        if self.at_kw("filter") && matches!(self.peek_at(1), Some(Tok::LParen)) {
            self.pos += 2;
            self.expect_kw("where")?;
            args.push(self.expr()?);
            self.expect(&Tok::RParen)?;
        }
        if self.eat_kw("over") {
            self.window_spec(&mut args)?;
        }
        Ok(Expr::Func { name, args })
    }

    fn primary(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.primary_inner();
        self.depth -= 1;
        e
    }

    fn primary_inner(&mut self) -> PResult<Expr> {
        match self.next() {
            None => err("unexpected end of input"),
            Some(Tok::Num(n)) => Ok(Expr::Literal(Lit::Num(n))),
            Some(Tok::Str(s)) => Ok(Expr::Literal(Lit::Str(s))),
            Some(Tok::Param) => Ok(Expr::Param),
            Some(Tok::Op(op)) if op == "*" => Ok(Expr::Star),
            Some(Tok::LParen) => {
                if self.at_query_start() {
                    let q = self.query()?;
                    self.expect(&Tok::RParen)?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let mut list = self.expr_list()?;
                self.expect(&Tok::RParen)?;
                Ok(if list.len() == 1 { list.pop().expect("one") } else { Expr::Tuple(list) })
            }
            Some(Tok::Word(w)) => self.word(w),
            Some(Tok::Quoted { text, double }) => self.column_ref(text, double),
            Some(t) => err(format!("unexpected token {t:?}")),
        }
    }

    fn word(&mut self, w: String) -> PResult<Expr> {
        let lower = w.to_lowercase();
        match lower.as_str() {
            "null" | "true" | "false" | "current_date" | "current_time" | "current_timestamp" => {
                return Ok(Expr::Literal(Lit::Keyword(lower)));
            }
            "case" => return self.case(),
            "exists" => {
                self.expect(&Tok::LParen)?;
                let q = self.query()?;
                self.expect(&Tok::RParen)?;
                return Ok(Expr::Subquery(Box::new(q)));
            }
            "cast" => {
                self.expect(&Tok::LParen)?;
                let inner = self.expr()?;
                self.expect_kw("as")?;
                while let Some(Tok::Word(_)) = self.peek() {
                    self.pos += 1;
                }
                if self.eat(&Tok::LParen) {
                    self.expr_list()?;
                    self.expect(&Tok::RParen)?;
                }
                self.expect(&Tok::RParen)?;
                return Ok(Expr::Func { name: "cast".into(), args: vec![inner] });
            }
            _ => {}
        }
        if matches!(self.peek(), Some(Tok::LParen)) {
            self.pos += 1;
            return self.function(w);
        }
        if reserved(&w) {
            return err(format!("unexpected keyword {w}"));
        }
        self.column_ref(w, false)
    }

    fn column_ref(&mut self, first: String, double_quoted: bool) -> PResult<Expr> {
        if !self.eat(&Tok::Dot) {
            return Ok(Expr::Column { qualifier: None, name: first, double_quoted });
        }
        if self.at_op("*") {
            self.pos += 1;
            return Ok(Expr::QualifiedStar(first));
        }
        let second = self.name()?;
        if !self.eat(&Tok::Dot) {
            return Ok(Expr::Column { qualifier: Some(first), name: second, double_quoted: false });
        }
        if self.at_op("*") {
            self.pos += 1;
            return Ok(Expr::QualifiedStar(second));
        }
        let third = self.name()?;
        Ok(Expr::Column { qualifier: Some(second), name: third, double_quoted: false })
    }

    fn case(&mut self) -> PResult<Expr> {
        let operand = if self.at_kw("when") { None } else { Some(Box::new(self.expr()?)) };
        let mut branches = Vec::new();
        while self.eat_kw("when") {
            let cond = self.expr()?;
            self.expect_kw("then")?;
            branches.push((cond, self.expr()?));
        }
        if branches.is_empty() {
            return err("CASE without WHEN");
        }
        let otherwise = if self.eat_kw("else") { Some(Box::new(self.expr()?)) } else { None };
        self.expect_kw("end")?;
        Ok(Expr::Case { operand, branches, otherwise })
    }
}

/// Parses one `SELECT`/`WITH`/`VALUES` statement, with an optional trailing `;`.
pub fn parse(sql: &str) -> Result<Query, ParseError> {
    let toks = lex(sql).map_err(|e| ParseError(e.0))?;
    let mut p = Parser { toks, pos: 0, depth: 0 };
    let q = p.query()?;
    while p.eat(&Tok::Semi) {}
    if p.pos < p.toks.len() {
        return err(format!("trailing input at token {}", p.pos));
    }
    Ok(q)
}

/// Whether the statement ends in an `ORDER BY` outside any parentheses.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(toks) = lex(sql) else { return false };
    let mut depth = 0i64;
    toks.iter().zip(toks.iter().skip(1)).any(|(a, b)| {
        match a {
            Tok::LParen => depth += 1,
            Tok::RParen => depth -= 1,
            _ => {}
        }
        depth == 0 && a.is_kw("order") && b.is_kw("by")
    })
}

/// Schema items and literal values referenced by a query.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkingSets {
    /// Lowercased `table` and `table.column` strings.
    pub schema_entities: BTreeSet<String>,
    /// Lowercased strings and normalized numbers.
    pub value_entities: BTreeSet<String>,
    /// Set when the input did not parse; both sets are then empty.
    pub parse_failure: bool,
}

/// Numbers lose trailing fractional zeros; strings are lowercased.
pub fn normalize_literal(lit: &Lit) -> Option<String> {
    match lit {
        Lit::Str(s) => Some(s.to_lowercase()),
        Lit::Num(n) => Some(normalize_number(n)),
        Lit::Keyword(_) => None,
    }
}

pub fn normalize_number(n: &str) -> String {
    let mut n = n.to_lowercase();
    if n.contains('.') && !n.contains('e') && !n.starts_with("0x") {
        n = n.trim_end_matches('0').trim_end_matches('.').to_string();
        if n.starts_with('.') {
            n.insert(0, '0');
        }
        if n.is_empty() {
            n = "0".into();
        }
    }
    n
}

#[derive(Debug, Clone)]
enum Source {
    Table(String),
    /// Subquery or CTE; output names when known.
    Derived(Option<Vec<String>>),
}

#[derive(Debug, Clone)]
struct Binding {
    name: String,
    source: Source,
}

#[derive(Debug, Clone, Default)]
struct Scope {
    bindings: Vec<Binding>,
    aliases: Vec<String>,
}

impl Scope {
    fn tables(&self) -> impl Iterator<Item = &str> {
        self.bindings.iter().filter_map(|b| match &b.source {
            Source::Table(t) => Some(t.as_str()),
            Source::Derived(_) => None,
        })
    }

    fn derived_may_have(&self, column: &str) -> bool {
        self.bindings.iter().any(|b| match &b.source {
            Source::Derived(None) => true,
            Source::Derived(Some(names)) => names.iter().any(|n| n == column),
            Source::Table(_) => false,
        })
    }
}

enum Resolved {
    Column(String, String),
    Literal(String),
    Ignore,
}

struct Extractor<'a> {
    catalog: Option<&'a SchemaCatalog>,
    out: LinkingSets,
    ctes: Vec<(String, Option<Vec<String>>)>,
}

fn output_names(q: &Query) -> Option<Vec<String>> {
    let first = q.body.first()?;
    let mut names = Vec::new();
    for item in &first.items {
        match (&item.alias, &item.expr) {
            (Some(a), _) => names.push(a.to_lowercase()),
            (None, Expr::Column { name, .. }) => names.push(name.to_lowercase()),
            (None, Expr::Star | Expr::QualifiedStar(_)) => return None,
            _ => {}
        }
    }
    Some(names)
}

fn is_literal(e: &Expr) -> Option<String> {
    match e {
        Expr::Literal(l) => normalize_literal(l),
        Expr::Neg(inner) => match inner.as_ref() {
            Expr::Literal(Lit::Num(n)) => Some(format!("-{}", normalize_number(n))),
            _ => None,
        },
        _ => None,
    }
}

impl<'a> Extractor<'a> {
    fn has_column(&self, table: &str, column: &str) -> bool {
        self.catalog.is_some_and(|c| c.column(table, column).is_some())
    }

    fn add_table(&mut self, t: &str) {
        self.out.schema_entities.insert(t.to_lowercase());
    }

    fn add_column(&mut self, t: &str, c: &str) {
        self.add_table(t);
        self.out.schema_entities.insert(format!("{}.{}", t.to_lowercase(), c.to_lowercase()));
    }

    fn resolve(&self, qualifier: Option<&str>, name: &str, double_quoted: bool, scopes: &[Scope], alias_first: bool) -> Resolved {
        let lname = name.to_lowercase();
        if let Some(q) = qualifier {
            let lq = q.to_lowercase();
            for scope in scopes.iter().rev() {
                if let Some(b) = scope.bindings.iter().find(|b| b.name == lq) {
                    return match &b.source {
                        Source::Table(t) => Resolved::Column(t.clone(), lname),
                        Source::Derived(_) => Resolved::Ignore,
                    };
                }
            }
            return Resolved::Column(lq, lname);
        }
        let Some(inner) = scopes.last() else { return Resolved::Ignore };
        if alias_first && inner.aliases.contains(&lname) {
            return Resolved::Ignore;
        }
        if self.catalog.is_some() {
            for scope in scopes.iter().rev() {
                if let Some(t) = scope.tables().find(|t| self.has_column(t, &lname)) {
                    return Resolved::Column(t.to_string(), lname);
                }
                if scope.derived_may_have(&lname) {
                    return Resolved::Ignore;
                }
            }
            if inner.aliases.contains(&lname) {
                return Resolved::Ignore;
            }
            if double_quoted {
                return Resolved::Literal(name.to_lowercase());
            }
        } else if (inner.derived_may_have(&lname) || inner.aliases.contains(&lname)) && inner.tables().next().is_none() {
            return Resolved::Ignore;
        }
        for scope in scopes.iter().rev() {
            if let Some(t) = scope.tables().next() {
                return Resolved::Column(t.to_string(), lname);
            }
        }
        Resolved::Ignore
    }

    fn value_operand(&mut self, e: &Expr, scopes: &[Scope]) {
        if let Some(v) = is_literal(e) {
            self.out.value_entities.insert(v);
        } else if let Expr::Column { qualifier: None, name, double_quoted: true } = e {
            if let Resolved::Literal(v) = self.resolve(None, name, true, scopes, false) {
                self.out.value_entities.insert(v);
            }
        }
    }

    fn expr(&mut self, e: &Expr, scopes: &[Scope], alias_first: bool) {
        match e {
            Expr::Column { qualifier, name, double_quoted } => {
                match self.resolve(qualifier.as_deref(), name, *double_quoted, scopes, alias_first) {
                    Resolved::Column(t, c) => self.add_column(&t, &c),
                    Resolved::Literal(_) | Resolved::Ignore => {}
                }
            }
            Expr::QualifiedStar(q) => {
                if let Resolved::Column(t, _) = self.resolve(Some(q), "*", false, scopes, false) {
                    self.add_table(&t);
                }
            }
            Expr::Literal(_) | Expr::Param | Expr::Star => {}
            Expr::Neg(inner) | Expr::Unary(inner) => self.expr(inner, scopes, alias_first),
            Expr::Binary { op, left, right } => {
                let compares = matches!(
                    op.as_str(),
                    "=" | "==" | "!=" | "<>" | "<" | "<=" | ">" | ">=" | "LIKE" | "GLOB" | "REGEXP" | "MATCH"
                );
                if compares {
                    self.value_operand(left, scopes);
                    self.value_operand(right, scopes);
                }
                self.expr(left, scopes, alias_first);
                self.expr(right, scopes, alias_first);
            }
            Expr::Between { expr, low, high } => {
                self.value_operand(low, scopes);
                self.value_operand(high, scopes);
                for x in [expr, low, high] {
                    self.expr(x, scopes, alias_first);
                }
            }
            Expr::InList { expr, list } => {
                self.expr(expr, scopes, alias_first);
                for item in list {
                    self.value_operand(item, scopes);
                    self.expr(item, scopes, alias_first);
                }
            }
            Expr::InQuery { expr, query } => {
                self.expr(expr, scopes, alias_first);
                self.query(query, scopes);
            }
            Expr::Func { args, .. } | Expr::Tuple(args) => {
                for a in args {
                    self.expr(a, scopes, alias_first);
                }
            }
            Expr::Case { operand, branches, otherwise } => {
                if let Some(o) = operand {
                    self.expr(o, scopes, alias_first);
                    for (when, _) in branches {
                        self.value_operand(when, scopes);
                    }
                }
                for (when, then) in branches {
                    self.expr(when, scopes, alias_first);
                    self.expr(then, scopes, alias_first);
                }
                if let Some(o) = otherwise {
                    self.expr(o, scopes, alias_first);
                }
            }
            Expr::Subquery(q) => self.query(q, scopes),
        }
    }

    fn query(&mut self, q: &Query, outer: &[Scope]) {
        let saved = self.ctes.len();
        for cte in &q.ctes {
            let names = if cte.columns.is_empty() {
                output_names(&cte.query)
            } else {
                Some(cte.columns.iter().map(|c| c.to_lowercase()).collect())
            };
            self.ctes.push((cte.name.to_lowercase(), names));
            self.query(&cte.query, outer);
        }
        let single = q.body.len() == 1;
        for select in &q.body {
            let order: &[Expr] = if single { &q.order_by } else { &[] };
            self.select(select, order, outer);
        }
        self.ctes.truncate(saved);
    }

    fn select(&mut self, s: &Select, order_by: &[Expr], outer: &[Scope]) {
        let mut scope = Scope::default();
        for item in &s.from {
            match item {
                FromItem::Table { name, alias } => {
                    let lname = name.to_lowercase();
                    let cte = self.ctes.iter().rev().find(|(n, _)| *n == lname).map(|(_, cols)| cols.clone());
                    let source = match cte {
                        Some(cols) => Source::Derived(cols),
                        None => {
                            self.add_table(&lname);
                            Source::Table(lname.clone())
                        }
                    };
                    let bound = alias.as_deref().map(str::to_lowercase).unwrap_or(lname);
                    scope.bindings.push(Binding { name: bound, source });
                }
                FromItem::Subquery { query, alias } => {
                    self.query(query, outer);
                    let bound = alias.as_deref().map(str::to_lowercase).unwrap_or_default();
                    scope.bindings.push(Binding { name: bound, source: Source::Derived(output_names(query)) });
                }
            }
        }
        scope.aliases = s.items.iter().filter_map(|i| i.alias.as_deref().map(str::to_lowercase)).collect();
        let mut scopes = outer.to_vec();
        scopes.push(scope);
        for (right, cols) in &s.join_using {
            let tables: Vec<String> = s.from[..=*right]
                .iter()
                .rev()
                .take(2)
                .filter_map(|f| match f {
                    FromItem::Table { name, .. } => Some(name.to_lowercase()),
                    FromItem::Subquery { .. } => None,
                })
                .filter(|t| !self.ctes.iter().any(|(n, _)| n == t))
                .collect();
            for t in tables {
                for c in cols {
                    self.add_column(&t, c);
                }
            }
        }
        for item in &s.items {
            self.expr(&item.expr, &scopes, false);
        }
        for e in s.join_on.iter().chain(s.filter.iter()) {
            self.expr(e, &scopes, false);
        }
        for row in &s.values {
            for e in row {
                self.expr(e, &scopes, false);
            }
        }
        for e in s.group_by.iter().chain(s.having.iter()).chain(order_by) {
            self.expr(e, &scopes, true);
        }
    }
}

/// Tables, columns and compared literals of `sql`, with aliases resolved to
/// real tables. Unqualified columns are attributed through `catalog` when
/// given. Never fails: unparsable input yields empty sets and the flag.
pub fn extract_entities(sql: &str, catalog: Option<&SchemaCatalog>) -> LinkingSets {
    match parse(sql) {
        Ok(q) => {
            let mut x = Extractor { catalog, out: LinkingSets::default(), ctes: Vec::new() };
            x.query(&q, &[]);
            x.out
        }
        Err(_) => LinkingSets { parse_failure: true, ..Default::default() },
    }
}

/// Byte-level entry point; invalid UTF-8 is decoded lossily.
pub fn extract_entities_bytes(sql: &[u8], catalog: Option<&SchemaCatalog>) -> LinkingSets {
    extract_entities(&String::from_utf8_lossy(sql), catalog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn simple_filter() {
        let l = extract_entities("SELECT School FROM frpm WHERE `Low Grade` = 'K'", None);
        assert_eq!(l.schema_entities, set(&["frpm", "frpm.low grade", "frpm.school"]));
        assert_eq!(l.value_entities, set(&["k"]));
        assert!(!l.parse_failure);
    }

    #[test]
    fn select_one_is_empty() {
        let l = extract_entities("SELECT 1", None);
        assert!(l.schema_entities.is_empty() && l.value_entities.is_empty() && !l.parse_failure);
    }

    #[test]
    fn aliases_resolve_to_tables() {
        let l = extract_entities(
            "SELECT s.Phone FROM frpm AS f JOIN schools s ON f.CDSCode = s.CDSCode WHERE f.`Charter Funding Type` = 'Directly funded' AND s.OpenDate > '2000-01-01'",
            None,
        );
        assert_eq!(
            l.schema_entities,
            set(&["frpm", "frpm.cdscode", "frpm.charter funding type", "schools", "schools.cdscode", "schools.opendate", "schools.phone"])
        );
        assert_eq!(l.value_entities, set(&["directly funded", "2000-01-01"]));
    }

    #[test]
    fn numbers_are_normalized() {
        let l = extract_entities("SELECT a FROM t WHERE b IN (1.50, 2.0, -3) AND c BETWEEN 10 AND 20.000", None);
        assert_eq!(l.value_entities, set(&["1.5", "2", "-3", "10", "20"]));
    }

    #[test]
    fn garbage_sets_flag() {
        for s in ["", "SELECT", "DROP TABLE x", "SELECT (((", "\u{0}\u{1}"] {
            let l = extract_entities(s, None);
            assert!(l.parse_failure, "{s:?}");
            assert!(l.schema_entities.is_empty());
        }
    }

    #[test]
    fn deep_nesting_fails_cleanly() {
        let sql = format!("SELECT {}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(extract_entities(&sql, None).parse_failure);
    }

    #[test]
    fn order_by_alias_is_not_a_column() {
        let l = extract_entities("SELECT COUNT(*) AS cnt FROM t GROUP BY g ORDER BY cnt DESC LIMIT 1", None);
        assert_eq!(l.schema_entities, set(&["t", "t.g"]));
    }

    #[test]
    fn cte_columns_come_from_base_tables() {
        let l = extract_entities("WITH x AS (SELECT a FROM t WHERE b = 2) SELECT a FROM x", None);
        assert_eq!(l.schema_entities, set(&["t", "t.a", "t.b"]));
        assert_eq!(l.value_entities, set(&["2"]));
    }

    #[test]
    fn top_level_order_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
    }
}
