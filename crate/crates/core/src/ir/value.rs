//! Scalar values and finite domains shared by every stage.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Mutex, OnceLock};

/// Interns a symbol label and returns a `'static` handle.
///
/// Labels come from archetype definitions and model documents; the set is
/// small and lives for the whole process.
pub fn intern(s: &str) -> &'static str {
    static TABLE: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
    let mut table = TABLE.get_or_init(|| Mutex::new(HashSet::new())).lock().expect("symbol table poisoned");
    if let Some(existing) = table.get(s) {
        return existing;
    }
    let leaked: &'static str = Box::leak(s.to_owned().into_boxed_str());
    table.insert(leaked);
    leaked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Sym(&'static str),
}

impl Value {
    pub fn sym(s: &str) -> Self {
        Value::Sym(intern(s))
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_int(self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }

    /// Parses the textual form used in traces and scripts.
    pub fn parse(text: &str) -> Value {
        let t = text.trim();
        match t {
            "TRUE" | "true" => Value::Bool(true),
            "FALSE" | "false" => Value::Bool(false),
            _ => match t.parse::<i64>() {
                Ok(i) => Value::Int(i),
                Err(_) => Value::sym(t),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(true) => f.write_str("TRUE"),
            Value::Bool(false) => f.write_str("FALSE"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

/// A finite, explicitly enumerated domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Domain {
    Bool,
    /// Inclusive integer range.
    Range(i64, i64),
    /// Sorted, duplicate-free integer set.
    IntSet(Vec<i64>),
    /// Symbolic enumeration in declaration order.
    Enum(Vec<&'static str>),
}

impl Domain {
    pub fn enumeration<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Domain::Enum(labels.into_iter().map(|s| intern(s.as_ref())).collect())
    }

    /// Builds the tightest domain for a set of integers.
    pub fn from_ints(values: impl IntoIterator<Item = i64>) -> Self {
        let mut v: Vec<i64> = values.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        match (v.first(), v.last()) {
            (Some(&lo), Some(&hi)) if (hi - lo + 1) as usize == v.len() => Domain::Range(lo, hi),
            _ => Domain::IntSet(v),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Domain::Bool => 2,
            Domain::Range(lo, hi) => {
                if hi < lo {
                    0
                } else {
                    (hi - lo + 1) as usize
                }
            }
            Domain::IntSet(v) => v.len(),
            Domain::Enum(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, index: usize) -> Value {
        match self {
            Domain::Bool => Value::Bool(index != 0),
            Domain::Range(lo, _) => Value::Int(lo + index as i64),
            Domain::IntSet(v) => Value::Int(v[index]),
            Domain::Enum(v) => Value::Sym(v[index]),
        }
    }

    pub fn index_of(&self, value: Value) -> Option<usize> {
        match (self, value) {
            (Domain::Bool, Value::Bool(b)) => Some(b as usize),
            (Domain::Range(lo, hi), Value::Int(i)) if i >= *lo && i <= *hi => Some((i - lo) as usize),
            (Domain::IntSet(v), Value::Int(i)) => v.binary_search(&i).ok(),
            (Domain::Enum(v), Value::Sym(s)) => v.iter().position(|l| *l == s),
            _ => None,
        }
    }

    pub fn contains(&self, value: Value) -> bool {
        self.index_of(value).is_some()
    }

    pub fn values(&self) -> impl Iterator<Item = Value> + '_ {
        (0..self.len()).map(move |i| self.value(i))
    }

    /// Whether `label` names a member of an enumerated domain.
    pub fn has_label(&self, label: &str) -> bool {
        matches!(self, Domain::Enum(v) if v.contains(&label))
    }

    /// Number of bits needed to store an index into this domain.
    pub fn bit_width(&self) -> u32 {
        let n = self.len();
        if n <= 1 {
            0
        } else {
            usize::BITS - (n - 1).leading_zeros()
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Bool => f.write_str("boolean"),
            Domain::Range(lo, hi) => write!(f, "{lo} .. {hi}"),
            Domain::IntSet(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "{{{}}}", parts.join(", "))
            }
            Domain::Enum(v) => write!(f, "{{{}}}", v.join(",")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_returns_same_pointer() {
        let a = intern("nominal");
        let b = intern(&String::from("nominal"));
        assert!(std::ptr::eq(a, b));
    }

    #[test]
    fn bit_widths() {
        assert_eq!(Domain::Range(0, 0).bit_width(), 0);
        assert_eq!(Domain::Bool.bit_width(), 1);
        assert_eq!(Domain::enumeration(["a", "b", "c"]).bit_width(), 2);
        assert_eq!(Domain::Range(0, 12).bit_width(), 4);
    }

    #[test]
    fn from_ints_prefers_ranges() {
        assert_eq!(Domain::from_ints([3, 1, 2, 2]), Domain::Range(1, 3));
        assert_eq!(Domain::from_ints([0, 2, 4]), Domain::IntSet(vec![0, 2, 4]));
    }

    #[test]
    fn parse_round_trips_display() {
        for v in [Value::Bool(true), Value::Int(-3), Value::sym("broken")] {
            assert_eq!(Value::parse(&v.to_string()), v);
        }
    }
}
