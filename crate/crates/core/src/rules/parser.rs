use std::collections::HashSet;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, Position};

/// Parse checker source into a [`RuleProgram`].
///
/// A leading `#opportunity: <id>` header line and markdown code fences are
/// tolerated so checker files and raw model emissions parse the same way.
pub fn parse_program(source: &str, opportunity_id: &str) -> Result<RuleProgram, ParseError> {
    let cleaned = strip_code_fences(source);
    let tokens = tokenize(&cleaned)?;
    let mut p = Parser {
        tokens,
        at: 0,
        nodes: Vec::new(),
        scopes: vec![ScopeFrame::default()],
    };
    let mut body = Vec::new();
    p.skip_semis();
    while !p.check(&Tok::Eof) {
        body.push(p.statement()?);
        p.skip_semis();
    }
    if body.is_empty() {
        return Err(ParseError::MissingReturn {
            pos: Position { line: 1, column: 1 },
        });
    }
    let nodes: Vec<RuleNode> = p
        .nodes
        .into_iter()
        .map(|n| n.expect("every reserved node is filled"))
        .collect();
    let program = RuleProgram {
        opportunity_id: opportunity_id.to_string(),
        nodes,
        body,
        source_text: cleaned,
    };
    check_returns(&program)?;
    Ok(program)
}

/// Remove surrounding markdown fences (```lang ... ```) if present.
pub(crate) fn strip_code_fences(source: &str) -> String {
    let trimmed = source.trim();
    if !trimmed.starts_with("```") {
        return source.to_string();
    }
    let mut lines: Vec<&str> = trimmed.lines().collect();
    lines.remove(0);
    if lines.last().is_some_and(|l| l.trim().starts_with("```")) {
        lines.pop();
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[derive(Default)]
struct ScopeFrame {
    locals: HashSet<String>,
    loops: HashSet<String>,
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    nodes: Vec<Option<RuleNode>>,
    scopes: Vec<ScopeFrame>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn pos(&self) -> Position {
        self.tokens[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at < self.tokens.len() - 1 {
            self.at += 1;
        }
        t
    }

    fn check(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn check_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<Token, ParseError> {
        if self.check(&t) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.check_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{w}`")))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            other => format!("{other:?}"),
        };
        ParseError::syntax(self.pos(), format!("expected {what}, found {found}"))
    }

    fn skip_semis(&mut self) {
        while self.check(&Tok::Semi) {
            self.bump();
        }
    }

    fn reserve(&mut self) -> NodeId {
        self.nodes.push(None);
        self.nodes.len() - 1
    }

    fn fill(&mut self, id: NodeId, kind: NodeKind, line: usize) {
        self.nodes[id] = Some(RuleNode { id, kind, line });
    }

    fn is_local(&self, name: &str) -> bool {
        self.scopes.iter().rev().any(|s| s.locals.contains(name))
    }

    fn is_loop_binding(&self, name: &str) -> bool {
        self.scopes.iter().rev().any(|s| s.loops.contains(name))
    }

    fn statement(&mut self) -> Result<NodeId, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(w) => match w.as_str() {
                "if" => self.if_statement(),
                "return" => {
                    let id = self.reserve();
                    self.bump();
                    if matches!(self.peek(), Tok::RBrace | Tok::Eof | Tok::Semi) {
                        return Err(ParseError::syntax(pos, "`return` needs a value"));
                    }
                    let value = self.expr()?;
                    self.fill(id, NodeKind::Return { value }, pos.line);
                    Ok(id)
                }
                "let" => {
                    let id = self.reserve();
                    self.bump();
                    let name = self.binding_name()?;
                    self.expect(Tok::Assign, "`=`")?;
                    let value = self.expr()?;
                    self.scopes
                        .last_mut()
                        .expect("scope")
                        .locals
                        .insert(name.clone());
                    self.fill(
                        id,
                        NodeKind::Assignment {
                            name,
                            value,
                            declare: true,
                        },
                        pos.line,
                    );
                    Ok(id)
                }
                "for" => self.for_statement(),
                "elif" => Err(ParseError::syntax(pos, "use `else if` instead of `elif`")),
                "while" | "def" | "import" | "class" | "with" => Err(ParseError::syntax(
                    pos,
                    format!("`{w}` is not part of the rule language"),
                )),
                _ if matches!(self.peek_at(1), Tok::Assign) => {
                    if !self.is_local(&w) {
                        return Err(ParseError::syntax(
                            pos,
                            format!("assignment to undeclared name `{w}` (declare it with `let`)"),
                        ));
                    }
                    let id = self.reserve();
                    self.bump();
                    self.bump();
                    let value = self.expr()?;
                    self.fill(
                        id,
                        NodeKind::Assignment {
                            name: w,
                            value,
                            declare: false,
                        },
                        pos.line,
                    );
                    Ok(id)
                }
                _ => Err(self.unexpected("a statement")),
            },
            _ => Err(self.unexpected("a statement")),
        }
    }

    fn binding_name(&mut self) -> Result<String, ParseError> {
        let pos = self.pos();
        match self.bump().tok {
            Tok::Ident(n) if !is_reserved(&n) => Ok(n),
            Tok::Ident(n) => Err(ParseError::syntax(pos, format!("`{n}` is reserved"))),
            _ => Err(ParseError::syntax(pos, "expected a name")),
        }
    }

    fn if_statement(&mut self) -> Result<NodeId, ParseError> {
        let pos = self.pos();
        let id = self.reserve();
        self.expect_word("if")?;
        let condition = self.expr()?;
        let then_branch = self.block()?;
        let else_branch = if self.check_word("else") {
            let else_pos = self.pos();
            self.bump();
            if self.check_word("if") {
                let block = self.reserve();
                let nested = self.if_statement()?;
                self.fill(
                    block,
                    NodeKind::Block {
                        statements: vec![nested],
                    },
                    else_pos.line,
                );
                block
            } else {
                self.block()?
            }
        } else {
            let block = self.reserve();
            self.fill(block, NodeKind::Block { statements: vec![] }, pos.line);
            block
        };
        self.fill(
            id,
            NodeKind::Conditional {
                condition,
                then_branch,
                else_branch,
            },
            pos.line,
        );
        Ok(id)
    }

    fn for_statement(&mut self) -> Result<NodeId, ParseError> {
        let pos = self.pos();
        let id = self.reserve();
        self.expect_word("for")?;
        let binding = self.binding_name()?;
        self.expect_word("in")?;
        if !(self.check_word("household") || self.check_word("hh") || self.check_word("members")) {
            return Err(self.unexpected("`household`"));
        }
        self.bump();
        self.scopes.push(ScopeFrame::default());
        self.scopes
            .last_mut()
            .expect("scope")
            .loops
            .insert(binding.clone());
        let body = self.block_inner();
        self.scopes.pop();
        let body = body?;
        self.fill(id, NodeKind::MemberLoop { binding, body }, pos.line);
        Ok(id)
    }

    fn block(&mut self) -> Result<NodeId, ParseError> {
        self.scopes.push(ScopeFrame::default());
        let r = self.block_inner();
        self.scopes.pop();
        r
    }

    fn block_inner(&mut self) -> Result<NodeId, ParseError> {
        let pos = self.pos();
        if self.check(&Tok::Colon) {
            return Err(ParseError::syntax(
                pos,
                "blocks use braces `{ ... }`, not a colon",
            ));
        }
        self.expect(Tok::LBrace, "`{`")?;
        let id = self.reserve();
        let mut statements = Vec::new();
        self.skip_semis();
        while !self.check(&Tok::RBrace) {
            if self.check(&Tok::Eof) {
                return Err(ParseError::syntax(pos, "unclosed `{`"));
            }
            statements.push(self.statement()?);
            self.skip_semis();
        }
        self.bump();
        self.fill(id, NodeKind::Block { statements }, pos.line);
        Ok(id)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.additive()?;
            if matches!(self.peek(), Tok::Cmp(_)) {
                return Err(ParseError::syntax(
                    self.pos(),
                    "chained comparisons are not allowed; nest conditionals instead",
                ));
            }
            return Ok(Expr::Compare {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            });
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Arith {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.check(&Tok::Minus) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let e = self.primary()?;
        if self.check(&Tok::Dot) {
            let pos = self.pos();
            if matches!(self.peek_at(1), Tok::Ident(w) if w == "get") {
                return Err(ParseError::ForbiddenConstruct {
                    pos,
                    construct: "dict.get() / default-value lookups".into(),
                });
            }
            return Err(ParseError::syntax(pos, "method calls are not allowed"));
        }
        if self.check(&Tok::LParen) {
            return Err(ParseError::syntax(
                self.pos(),
                "function calls are not allowed",
            ));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Literal(Literal::Int(i)))
            }
            Tok::Real(r) => {
                self.bump();
                Ok(Expr::Literal(Literal::Real(r)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(w) => {
                self.bump();
                match w.as_str() {
                    "true" | "True" => Ok(Expr::Literal(Literal::Bool(true))),
                    "false" | "False" => Ok(Expr::Literal(Literal::Bool(false))),
                    "household" | "hh" => self.household_lookup(pos),
                    "members" => {
                        self.expect(Tok::LBracket, "`[`")?;
                        let index = self.member_index()?;
                        self.expect(Tok::RBracket, "`]`")?;
                        let key = self.key_subscript()?;
                        Ok(Expr::Lookup(Lookup::Member {
                            member: MemberRef::Index(index),
                            key,
                        }))
                    }
                    _ if self.is_loop_binding(&w) => {
                        if !self.check(&Tok::LBracket) {
                            if self.check(&Tok::Dot) {
                                return Err(ParseError::ForbiddenConstruct {
                                    pos: self.pos(),
                                    construct: "dict.get() / default-value lookups".into(),
                                });
                            }
                            return Err(ParseError::syntax(
                                pos,
                                format!("member `{w}` can only be used as `{w}[\"key\"]`"),
                            ));
                        }
                        let key = self.key_subscript()?;
                        Ok(Expr::Lookup(Lookup::Member {
                            member: MemberRef::Loop(w),
                            key,
                        }))
                    }
                    _ if self.is_local(&w) => Ok(Expr::Local(w)),
                    _ if is_reserved(&w) => {
                        Err(ParseError::syntax(pos, format!("unexpected keyword `{w}`")))
                    }
                    _ => Err(ParseError::syntax(pos, format!("undefined name `{w}`"))),
                }
            }
            _ => Err(self.unexpected("an expression")),
        }
    }

    fn household_lookup(&mut self, pos: Position) -> Result<Expr, ParseError> {
        if self.check(&Tok::Dot) {
            return Err(ParseError::ForbiddenConstruct {
                pos: self.pos(),
                construct: "dict.get() / default-value lookups".into(),
            });
        }
        if !self.check(&Tok::LBracket) {
            return Err(ParseError::syntax(
                pos,
                "`household` must be indexed with a key",
            ));
        }
        match self.peek_at(1).clone() {
            Tok::Int(_) => {
                self.bump();
                let index = self.member_index()?;
                self.expect(Tok::RBracket, "`]`")?;
                let key = self.key_subscript()?;
                Ok(Expr::Lookup(Lookup::Member {
                    member: MemberRef::Index(index),
                    key,
                }))
            }
            _ => {
                let key = self.key_subscript()?;
                Ok(Expr::Lookup(Lookup::Household(key)))
            }
        }
    }

    fn member_index(&mut self) -> Result<usize, ParseError> {
        let pos = self.pos();
        match self.bump().tok {
            Tok::Int(i) if i >= 0 => Ok(i as usize),
            Tok::Ident(_) => Err(ParseError::ForbiddenConstruct {
                pos,
                construct: "computed member indices (use a member loop)".into(),
            }),
            _ => Err(ParseError::syntax(
                pos,
                "member index must be a non-negative integer",
            )),
        }
    }

    /// `["key"]`; keys must be literal strings.
    fn key_subscript(&mut self) -> Result<String, ParseError> {
        self.expect(Tok::LBracket, "`[`")?;
        let pos = self.pos();
        let key = match self.bump().tok {
            Tok::Str(s) if !s.is_empty() => s,
            Tok::Str(_) => return Err(ParseError::syntax(pos, "empty feature key")),
            Tok::Ident(_) | Tok::LBrace | Tok::Plus => {
                return Err(ParseError::ForbiddenConstruct {
                    pos,
                    construct: "dynamically generated keys (use a literal string)".into(),
                })
            }
            _ => {
                return Err(ParseError::syntax(
                    pos,
                    "feature keys must be string literals",
                ))
            }
        };
        if !self.check(&Tok::RBracket) {
            return Err(ParseError::ForbiddenConstruct {
                pos,
                construct: "dynamically generated keys (use a literal string)".into(),
            });
        }
        self.bump();
        if self.check(&Tok::LBracket) {
            return Err(ParseError::syntax(
                self.pos(),
                "feature values cannot be indexed",
            ));
        }
        Ok(key)
    }
}

fn is_reserved(w: &str) -> bool {
    matches!(
        w,
        "if" | "else"
            | "return"
            | "let"
            | "for"
            | "in"
            | "true"
            | "false"
            | "True"
            | "False"
            | "household"
            | "hh"
            | "members"
    )
}

/// Every execution path must end in exactly one `return`, and nothing may
/// follow a statement that always returns.
fn check_returns(program: &RuleProgram) -> Result<(), ParseError> {
    fn pos_of(p: &RuleProgram, id: NodeId) -> Position {
        Position {
            line: p.node(id).line,
            column: 1,
        }
    }

    fn block_returns(p: &RuleProgram, stmts: &[NodeId]) -> Result<bool, ParseError> {
        for (i, &s) in stmts.iter().enumerate() {
            if stmt_returns(p, s)? {
                if let Some(&next) = stmts.get(i + 1) {
                    return Err(ParseError::syntax(
                        pos_of(p, next),
                        "unreachable statement after return",
                    ));
                }
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn stmt_returns(p: &RuleProgram, id: NodeId) -> Result<bool, ParseError> {
        match &p.node(id).kind {
            NodeKind::Return { .. } => Ok(true),
            NodeKind::Conditional {
                then_branch,
                else_branch,
                ..
            } => {
                let t = stmt_returns(p, *then_branch)?;
                let e = stmt_returns(p, *else_branch)?;
                Ok(t && e)
            }
            NodeKind::Block { statements } => block_returns(p, statements),
            NodeKind::MemberLoop { body, .. } => {
                // the loop may run zero times
                stmt_returns(p, *body)?;
                Ok(false)
            }
            NodeKind::Assignment { .. } => Ok(false),
        }
    }

    if block_returns(program, &program.body)? {
        Ok(())
    } else {
        let last = *program.body.last().expect("non-empty body");
        Err(ParseError::MissingReturn {
            pos: pos_of(program, last),
        })
    }
}
