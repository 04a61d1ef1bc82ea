//! Necessity and sufficiency orderings for boolean statements: the logical
//! ideal that the numeric ordering metrics approximate.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A predicate over named atomic conditions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BoolStatement {
    Atom(String),
    Not(Box<BoolStatement>),
    And(Vec<BoolStatement>),
    Or(Vec<BoolStatement>),
}

impl BoolStatement {
    pub fn atom(name: impl Into<String>) -> Self {
        BoolStatement::Atom(name.into())
    }

    pub fn and(parts: impl IntoIterator<Item = BoolStatement>) -> Self {
        BoolStatement::And(parts.into_iter().collect())
    }

    pub fn or(parts: impl IntoIterator<Item = BoolStatement>) -> Self {
        BoolStatement::Or(parts.into_iter().collect())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: BoolStatement) -> Self {
        BoolStatement::Not(Box::new(inner))
    }

    pub fn eval(&self, is_true: &dyn Fn(&str) -> bool) -> bool {
        match self {
            BoolStatement::Atom(a) => is_true(a),
            BoolStatement::Not(s) => !s.eval(is_true),
            BoolStatement::And(parts) => parts.iter().all(|p| p.eval(is_true)),
            BoolStatement::Or(parts) => parts.iter().any(|p| p.eval(is_true)),
        }
    }

    pub fn atoms(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            BoolStatement::Atom(a) => {
                out.insert(a);
            }
            BoolStatement::Not(s) => s.collect_atoms(out),
            BoolStatement::And(parts) | BoolStatement::Or(parts) => {
                for p in parts {
                    p.collect_atoms(out);
                }
            }
        }
    }

    /// Truth value when exactly the atoms in `true_atoms` hold.
    fn holds_with(&self, true_atoms: &[&str]) -> bool {
        self.eval(&|a| true_atoms.contains(&a))
    }
}

fn check_ordering(statement: &BoolStatement, ordering: &[&str]) -> Result<()> {
    let distinct: BTreeSet<&str> = ordering.iter().copied().collect();
    if distinct.len() != ordering.len() {
        return Err(Error::Range("ordering repeats an atom".into()));
    }
    if let Some(missing) = statement.atoms().into_iter().find(|a| !distinct.contains(a)) {
        return Err(Error::Range(format!("ordering is missing atom `{missing}`")));
    }
    Ok(())
}

/// Smallest `i` such that keeping only the atoms at positions `≥ i` true
/// falsifies the statement, i.e. the shortest falsifying removed prefix.
pub fn logical_necessity_index(statement: &BoolStatement, ordering: &[&str]) -> Result<usize> {
    check_ordering(statement, ordering)?;
    if !statement.holds_with(ordering) {
        return Err(Error::Undefined("statement is false with every atom true".into()));
    }
    (1..=ordering.len())
        .find(|&i| !statement.holds_with(&ordering[i..]))
        .ok_or_else(|| Error::Undefined("no prefix removal falsifies the statement".into()))
}

/// Smallest `i` such that the first `i` atoms alone (all others false) satisfy
/// the statement.
pub fn logical_sufficiency_index(statement: &BoolStatement, ordering: &[&str]) -> Result<usize> {
    check_ordering(statement, ordering)?;
    (0..=ordering.len())
        .find(|&i| statement.holds_with(&ordering[..i]))
        .ok_or_else(|| Error::Undefined("no prefix satisfies the statement".into()))
}

/// Whether ordering `a` has better (or equal) necessity ordering than `b`.
pub fn has_better_necessity_ordering(statement: &BoolStatement, a: &[&str], b: &[&str]) -> Result<bool> {
    Ok(logical_necessity_index(statement, a)? <= logical_necessity_index(statement, b)?)
}

/// Whether ordering `a` has better (or equal) sufficiency ordering than `b`.
pub fn has_better_sufficiency_ordering(statement: &BoolStatement, a: &[&str], b: &[&str]) -> Result<bool> {
    Ok(logical_sufficiency_index(statement, a)? <= logical_sufficiency_index(statement, b)?)
}
