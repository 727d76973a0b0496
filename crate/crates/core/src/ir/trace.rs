use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Counterexample,
    Plan,
    Simulation,
}

/// A finite path of full-system assignments.
///
/// Every step assigns every variable in `vars`. A lasso additionally loops
/// from the last step back to `loop_start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub kind: TraceKind,
    pub vars: Vec<String>,
    pub steps: Vec<Vec<Value>>,
    pub loop_start: Option<usize>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    /// Value of `name` at 0-based step `step`.
    pub fn value(&self, step: usize, name: &str) -> Option<Value> {
        let i = self.var_index(name)?;
        self.steps.get(step).map(|s| s[i])
    }

    pub fn last(&self) -> Option<&[Value]> {
        self.steps.last().map(Vec::as_slice)
    }

    /// Column of values for one variable across all steps.
    pub fn column(&self, name: &str) -> Option<Vec<Value>> {
        let i = self.var_index(name)?;
        Some(self.steps.iter().map(|s| s[i]).collect())
    }
}
