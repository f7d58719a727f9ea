use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::ast::*;
use crate::features::{FeatureStore, KeyPath, StoreError, Value, HOUSEHOLD_SIZE_KEY};

/// Node ids executed by one complete evaluation.
pub type Trace = BTreeSet<NodeId>;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Decision {
        eligible: bool,
        trace: Trace,
    },
    /// The first feature, in execution order, the store could not supply.
    Missing {
        key: KeyPath,
        node: NodeId,
    },
}

impl EvalOutcome {
    pub fn decision(&self) -> Option<bool> {
        match self {
            EvalOutcome::Decision { eligible, .. } => Some(*eligible),
            EvalOutcome::Missing { .. } => None,
        }
    }

    pub fn trace(&self) -> Option<&Trace> {
        match self {
            EvalOutcome::Decision { trace, .. } => Some(trace),
            EvalOutcome::Missing { .. } => None,
        }
    }
}

/// Evaluation failures. Both indicate a broken checker or schema, never bad
/// user input.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("type fault at node {node}: {message}")]
    TypeFault { node: NodeId, message: String },
    #[error("node {node} reads {key}, which has no schema slot")]
    UndefinedSlot { node: NodeId, key: KeyPath },
}

/// Read access to known features. Implemented by [`FeatureStore`]; tests and
/// samplers provide their own.
pub trait FeatureLookup {
    /// `Ok(None)` is a miss. `Err` means the key is not defined at all.
    fn lookup(&self, key: &KeyPath) -> Result<Option<Value>, StoreError>;
}

impl FeatureLookup for FeatureStore {
    fn lookup(&self, key: &KeyPath) -> Result<Option<Value>, StoreError> {
        self.get(key).map(|v| v.cloned())
    }
}

/// Run `program` against `store`.
pub fn evaluate(
    program: &RuleProgram,
    store: &impl FeatureLookup,
) -> Result<EvalOutcome, EvalError> {
    let mut ev = Evaluator {
        program,
        store,
        trace: Trace::new(),
        locals: vec![HashMap::new()],
        members: Vec::new(),
    };
    match ev.run_block(program.body())? {
        Flow::Return(eligible) => Ok(EvalOutcome::Decision {
            eligible,
            trace: ev.trace,
        }),
        Flow::Missing(key, node) => Ok(EvalOutcome::Missing { key, node }),
        // the parser guarantees every path returns
        Flow::Continue => unreachable!("program fell off the end"),
    }
}

enum Flow {
    Continue,
    Return(bool),
    Missing(KeyPath, NodeId),
}

/// Result of evaluating an expression: a value, or the key that stopped it.
enum Val {
    Known(Value),
    Miss(KeyPath),
}

macro_rules! known {
    ($e:expr) => {
        match $e {
            Val::Known(v) => v,
            Val::Miss(k) => return Ok(Val::Miss(k)),
        }
    };
}

struct Evaluator<'a, S> {
    program: &'a RuleProgram,
    store: &'a S,
    trace: Trace,
    locals: Vec<HashMap<String, Value>>,
    /// Active loop bindings, innermost last.
    members: Vec<(String, usize)>,
}

fn fault(node: NodeId, message: impl Into<String>) -> EvalError {
    EvalError::TypeFault {
        node,
        message: message.into(),
    }
}

impl<S: FeatureLookup> Evaluator<'_, S> {
    fn run_block(&mut self, stmts: &[NodeId]) -> Result<Flow, EvalError> {
        self.locals.push(HashMap::new());
        let mut flow = Flow::Continue;
        for &s in stmts {
            flow = self.exec(s)?;
            if !matches!(flow, Flow::Continue) {
                break;
            }
        }
        self.locals.pop();
        Ok(flow)
    }

    fn exec(&mut self, id: NodeId) -> Result<Flow, EvalError> {
        self.trace.insert(id);
        let program = self.program;
        match &program.node(id).kind {
            NodeKind::Block { statements } => self.run_block(statements),
            NodeKind::Return { value } => match self.expr(id, value)? {
                Val::Known(Value::Bool(b)) => Ok(Flow::Return(b)),
                Val::Known(v) => Err(fault(
                    id,
                    format!("return value must be boolean, got {}", v.type_name()),
                )),
                Val::Miss(k) => Ok(Flow::Missing(k, id)),
            },
            NodeKind::Conditional {
                condition,
                then_branch,
                else_branch,
            } => match self.expr(id, condition)? {
                Val::Known(Value::Bool(true)) => self.exec(*then_branch),
                Val::Known(Value::Bool(false)) => self.exec(*else_branch),
                Val::Known(v) => Err(fault(
                    id,
                    format!("condition must be boolean, got {}", v.type_name()),
                )),
                Val::Miss(k) => Ok(Flow::Missing(k, id)),
            },
            NodeKind::Assignment {
                name,
                value,
                declare,
            } => {
                let v = match self.expr(id, value)? {
                    Val::Known(v) => v,
                    Val::Miss(k) => return Ok(Flow::Missing(k, id)),
                };
                if *declare {
                    self.locals
                        .last_mut()
                        .expect("scope")
                        .insert(name.clone(), v);
                } else {
                    let slot = self
                        .locals
                        .iter_mut()
                        .rev()
                        .find_map(|s| s.get_mut(name))
                        .ok_or_else(|| fault(id, format!("`{name}` is not declared")))?;
                    *slot = v;
                }
                Ok(Flow::Continue)
            }
            NodeKind::MemberLoop { binding, body } => {
                let size_key = KeyPath::household(HOUSEHOLD_SIZE_KEY);
                let size = match self.read(id, &size_key)? {
                    Val::Known(Value::Int(n)) if n >= 0 => n as usize,
                    Val::Known(v) => {
                        return Err(fault(
                            id,
                            format!("household size must be a non-negative integer, got {v}"),
                        ))
                    }
                    Val::Miss(k) => return Ok(Flow::Missing(k, id)),
                };
                for i in 0..size {
                    self.members.push((binding.clone(), i));
                    let flow = self.exec(*body);
                    self.members.pop();
                    let flow = flow?;
                    if !matches!(flow, Flow::Continue) {
                        return Ok(flow);
                    }
                }
                Ok(Flow::Continue)
            }
        }
    }

    fn read(&self, node: NodeId, key: &KeyPath) -> Result<Val, EvalError> {
        match self.store.lookup(key) {
            Ok(Some(v)) => Ok(Val::Known(v)),
            Ok(None) => Ok(Val::Miss(key.clone())),
            Err(StoreError::UndefinedSlot(k)) => Err(EvalError::UndefinedSlot { node, key: k }),
            Err(other) => Err(fault(node, other.to_string())),
        }
    }

    fn expr(&self, node: NodeId, e: &Expr) -> Result<Val, EvalError> {
        Ok(Val::Known(match e {
            Expr::Literal(l) => match l {
                Literal::Int(i) => Value::Int(*i),
                Literal::Real(r) => Value::Real(*r),
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Str(s) => Value::Str(s.clone()),
            },
            Expr::Local(name) => self
                .locals
                .iter()
                .rev()
                .find_map(|s| s.get(name))
                .cloned()
                .ok_or_else(|| fault(node, format!("`{name}` is not declared")))?,
            Expr::Lookup(l) => {
                let key = match l {
                    Lookup::Household(k) => KeyPath::household(k.clone()),
                    Lookup::Member { member, key } => {
                        let index = match member {
                            MemberRef::Index(i) => *i,
                            MemberRef::Loop(b) => self
                                .members
                                .iter()
                                .rev()
                                .find(|(name, _)| name == b)
                                .map(|(_, i)| *i)
                                .ok_or_else(|| {
                                    fault(node, format!("`{b}` used outside its loop"))
                                })?,
                        };
                        KeyPath::member(index, key.clone())
                    }
                };
                return self.read(node, &key);
            }
            Expr::Neg(inner) => match known!(self.expr(node, inner)?) {
                Value::Int(i) => Value::Int(
                    i.checked_neg()
                        .ok_or_else(|| fault(node, "integer overflow"))?,
                ),
                Value::Real(r) => Value::Real(-r),
                v => return Err(fault(node, format!("cannot negate a {}", v.type_name()))),
            },
            Expr::Arith { op, lhs, rhs } => {
                let a = known!(self.expr(node, lhs)?);
                let b = known!(self.expr(node, rhs)?);
                arith(node, *op, a, b)?
            }
            Expr::Compare { op, lhs, rhs } => {
                let a = known!(self.expr(node, lhs)?);
                let b = known!(self.expr(node, rhs)?);
                Value::Bool(compare(node, *op, &a, &b)?)
            }
        }))
    }
}

fn arith(node: NodeId, op: ArithOp, a: Value, b: Value) -> Result<Value, EvalError> {
    let overflow = || fault(node, "integer overflow");
    match (&a, &b) {
        (Value::Int(x), Value::Int(y)) => match op {
            ArithOp::Add => x.checked_add(*y).map(Value::Int).ok_or_else(overflow),
            ArithOp::Sub => x.checked_sub(*y).map(Value::Int).ok_or_else(overflow),
            ArithOp::Mul => x.checked_mul(*y).map(Value::Int).ok_or_else(overflow),
            ArithOp::Div => {
                if *y == 0 {
                    Err(fault(node, "division by zero"))
                } else {
                    Ok(Value::Real(*x as f64 / *y as f64))
                }
            }
        },
        _ => {
            let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
                return Err(fault(
                    node,
                    format!(
                        "cannot apply `{}` to {} and {}",
                        op.symbol(),
                        a.type_name(),
                        b.type_name()
                    ),
                ));
            };
            if op == ArithOp::Div && y == 0.0 {
                return Err(fault(node, "division by zero"));
            }
            Ok(Value::Real(match op {
                ArithOp::Add => x + y,
                ArithOp::Sub => x - y,
                ArithOp::Mul => x * y,
                ArithOp::Div => x / y,
            }))
        }
    }
}

fn compare(node: NodeId, op: CmpOp, a: &Value, b: &Value) -> Result<bool, EvalError> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => {
            if !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(fault(
                    node,
                    format!("strings only support == and !=, not `{}`", op.symbol()),
                ));
            }
            Some(x.cmp(y))
        }
        (Value::Bool(x), Value::Bool(y)) => {
            if !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(fault(
                    node,
                    format!("booleans only support == and !=, not `{}`", op.symbol()),
                ));
            }
            Some(x.cmp(y))
        }
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => {
                return Err(fault(
                    node,
                    format!("cannot compare {} with {}", a.type_name(), b.type_name()),
                ))
            }
        },
    };
    let Some(ord) = ord else {
        return Ok(op == CmpOp::Ne);
    };
    Ok(match op {
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Gt => ord == Ordering::Greater,
    })
}
