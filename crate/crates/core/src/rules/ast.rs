use std::collections::{BTreeMap, BTreeSet};

use crate::features::{KeyPath, ScopePattern};

/// Dense node identifier, assigned in source order starting at 0.
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
}

/// Which member a member lookup addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemberRef {
    /// The current iteration of the enclosing `for <binding> in household` loop.
    Loop(String),
    /// A fixed index, `members[i]`.
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Household(String),
    Member { member: MemberRef, key: String },
}

impl Lookup {
    pub fn key(&self) -> &str {
        match self {
            Lookup::Household(k) => k,
            Lookup::Member { key, .. } => key,
        }
    }

    pub fn pattern(&self) -> ScopePattern {
        match self {
            Lookup::Household(_) => ScopePattern::Household,
            Lookup::Member { .. } => ScopePattern::Member,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Lookup(Lookup),
    Local(String),
    Neg(Box<Expr>),
    Arith {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.visit(f),
            Expr::Arith { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// `if <cond> { .. } else { .. }`; both targets are `Block` nodes.
    Conditional {
        condition: Expr,
        then_branch: NodeId,
        else_branch: NodeId,
    },
    /// A branch target or loop body. Executing it records that the branch was
    /// taken even when it holds no statements.
    Block {
        statements: Vec<NodeId>,
    },
    Return {
        value: Expr,
    },
    /// `for <binding> in household { .. }`; `body` is a `Block`.
    MemberLoop {
        binding: String,
        body: NodeId,
    },
    /// `let name = expr` (declare) or `name = expr` (reassign).
    Assignment {
        name: String,
        value: Expr,
        declare: bool,
    },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Conditional { .. } => "conditional",
            NodeKind::Block { .. } => "block",
            NodeKind::Return { .. } => "return",
            NodeKind::MemberLoop { .. } => "member-loop",
            NodeKind::Assignment { .. } => "assignment",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// 1-based source line the node starts on.
    pub line: usize,
}

/// A parsed eligibility checker.
#[derive(Debug, Clone)]
pub struct RuleProgram {
    pub opportunity_id: String,
    pub(crate) nodes: Vec<RuleNode>,
    pub(crate) body: Vec<NodeId>,
    pub(crate) source_text: String,
}

impl RuleProgram {
    pub fn nodes(&self) -> &[RuleNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &RuleNode {
        &self.nodes[id]
    }

    /// Top-level statements in order.
    pub fn body(&self) -> &[NodeId] {
        &self.body
    }

    pub fn entry(&self) -> NodeId {
        self.body[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// The source line a node starts on, trimmed. Used as the code excerpt in
    /// question prompts.
    pub fn source_line(&self, id: NodeId) -> &str {
        let line = self.nodes[id].line;
        self.source_text
            .lines()
            .nth(line.saturating_sub(1))
            .map(str::trim)
            .unwrap_or("")
    }

    /// Equality of the parsed structure, ignoring source text and line numbers.
    pub fn structurally_eq(&self, other: &RuleProgram) -> bool {
        self.opportunity_id == other.opportunity_id
            && self.body == other.body
            && self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.id == b.id && a.kind == b.kind)
    }

    fn expressions(&self) -> impl Iterator<Item = &Expr> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Conditional { condition, .. } => Some(condition),
            NodeKind::Return { value } => Some(value),
            NodeKind::Assignment { value, .. } => Some(value),
            _ => None,
        })
    }

    fn for_each_subexpr<'a>(&'a self, mut f: impl FnMut(&'a Expr)) {
        for e in self.expressions() {
            e.visit(&mut f);
        }
    }

    pub fn has_member_loop(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, NodeKind::MemberLoop { .. }))
    }

    /// Every feature key the program can read, with its scope. Member loops
    /// contribute an implicit read of the household size.
    pub fn feature_keys(&self) -> BTreeSet<(ScopePattern, String)> {
        let mut keys = BTreeSet::new();
        self.for_each_subexpr(|e| {
            if let Expr::Lookup(l) = e {
                keys.insert((l.pattern(), l.key().to_string()));
            }
        });
        if self.has_member_loop() {
            keys.insert((
                ScopePattern::Household,
                crate::features::HOUSEHOLD_SIZE_KEY.to_string(),
            ));
        }
        keys
    }

    /// String literals compared (`==`/`!=`) directly against a lookup of `key`.
    pub fn compared_strings(&self, key: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.for_each_subexpr(|e| {
            if let Expr::Compare {
                op: CmpOp::Eq | CmpOp::Ne,
                lhs,
                rhs,
            } = e
            {
                for (a, b) in [(lhs, rhs), (rhs, lhs)] {
                    if let (Expr::Lookup(l), Expr::Literal(Literal::Str(s))) =
                        (a.as_ref(), b.as_ref())
                    {
                        if l.key() == key {
                            out.insert(s.clone());
                        }
                    }
                }
            }
        });
        out
    }

    /// Numeric literals a lookup is compared against, keyed by feature name.
    /// Sampling uses these to place values on both sides of each threshold.
    pub fn numeric_thresholds(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        self.for_each_subexpr(|e| {
            if let Expr::Compare { lhs, rhs, .. } = e {
                for (a, b) in [(lhs, rhs), (rhs, lhs)] {
                    let n = match b.as_ref() {
                        Expr::Literal(Literal::Int(i)) => Some(*i as f64),
                        Expr::Literal(Literal::Real(r)) => Some(*r),
                        Expr::Neg(inner) => match inner.as_ref() {
                            Expr::Literal(Literal::Int(i)) => Some(-(*i as f64)),
                            Expr::Literal(Literal::Real(r)) => Some(-*r),
                            _ => None,
                        },
                        _ => None,
                    };
                    if let (Expr::Lookup(l), Some(n)) = (a.as_ref(), n) {
                        let v = out.entry(l.key().to_string()).or_default();
                        if !v.contains(&n) {
                            v.push(n);
                        }
                    }
                }
            }
        });
        for v in out.values_mut() {
            v.sort_by(|a, b| a.total_cmp(b));
        }
        out
    }

    /// Whether the program reads `path`'s key in the matching scope.
    pub fn reads_key(&self, path: &KeyPath) -> bool {
        self.feature_keys()
            .contains(&(path.pattern(), path.key.clone()))
    }

    /// Conditional node ids in source order.
    pub fn conditionals(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Conditional { .. }))
            .map(|n| n.id)
    }
}
