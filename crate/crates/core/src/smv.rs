//! NuSMV text: module emission, counterexample printing and trace parsing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::archetype::template_defaults;
use crate::composer::CompositeMachine;
use crate::ir::archetype::DomainSpec;
use crate::ir::{
    Archetype, ArchetypeSpec, Assertion, ChoiceKind, Expr, Formula, LocalExpr, LocalRef, Target, Trace, TraceKind,
    Value,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmitOptions {
    /// Emit the legacy two-output Battery module, whose draw is the
    /// `output1.draw + output1.draw` sum.
    pub faithful_listing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("cannot express {0} in NuSMV")]
    UnsupportedConstruct(String),
}

/// Words that cannot be used as NuSMV identifiers.
pub const KEYWORDS: &[&str] = &[
    "MODULE",
    "DEFINE",
    "MDEFINE",
    "CONSTANTS",
    "VAR",
    "IVAR",
    "FROZENVAR",
    "INIT",
    "TRANS",
    "INVAR",
    "SPEC",
    "CTLSPEC",
    "LTLSPEC",
    "PSLSPEC",
    "COMPUTE",
    "NAME",
    "INVARSPEC",
    "FAIRNESS",
    "JUSTICE",
    "COMPASSION",
    "ISA",
    "ASSIGN",
    "CONSTRAINT",
    "SIMPWFF",
    "CTLWFF",
    "LTLWFF",
    "PSLWFF",
    "COMPWFF",
    "IN",
    "MIN",
    "MAX",
    "MIRROR",
    "PRED",
    "PREDICATES",
    "process",
    "array",
    "of",
    "boolean",
    "integer",
    "real",
    "word",
    "word1",
    "bool",
    "signed",
    "unsigned",
    "extend",
    "resize",
    "sizeof",
    "uwconst",
    "swconst",
    "EX",
    "AX",
    "EF",
    "AF",
    "EG",
    "AG",
    "E",
    "F",
    "O",
    "G",
    "H",
    "X",
    "Y",
    "Z",
    "A",
    "U",
    "S",
    "V",
    "T",
    "BU",
    "EBF",
    "ABF",
    "EBG",
    "ABG",
    "case",
    "esac",
    "mod",
    "next",
    "init",
    "union",
    "in",
    "xor",
    "xnor",
    "self",
    "TRUE",
    "FALSE",
    "count",
    "abs",
    "max",
    "min",
    "running",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

/// One emitted module and the instances that use it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmvModule {
    pub name: String,
    pub tag: Archetype,
    pub params: Vec<String>,
    /// Lines after the `MODULE` header.
    pub body: String,
    pub instances: Vec<usize>,
}

impl SmvModule {
    pub fn text(&self) -> String {
        format!("MODULE {}({})\n{}", self.name, self.params.join(", "), self.body)
    }
}

fn render_ref(r: &LocalRef, arity: usize, faithful: bool) -> Result<String, EmitError> {
    Ok(match r {
        LocalRef::Own(n) => n.clone(),
        LocalRef::Input(f) => format!("input.{f}"),
        LocalRef::Output(k, f) => {
            if *k == 0 || *k > arity {
                return Err(EmitError::UnsupportedConstruct(format!("output{k}.{f} with {arity} outputs")));
            }
            format!("output{k}.{f}")
        }
        LocalRef::OutputSum(f) => match arity {
            0 => "0".into(),
            1 => format!("output1.{f}"),
            2 if faithful => format!("(output1.{f} + output1.{f})"),
            n => {
                let parts: Vec<String> = (1..=n).map(|k| format!("output{k}.{f}")).collect();
                format!("({})", parts.join(" + "))
            }
        },
    })
}

fn render(e: &LocalExpr, arity: usize, faithful: bool) -> Result<Expr<String>, EmitError> {
    e.try_map(&mut |r| render_ref(r, arity, faithful).map(Expr::Ref))
}

fn domain_text(spec: &ArchetypeSpec) -> String {
    match &spec.domain_spec {
        DomainSpec::Enum(labels) => format!("{{{}}}", labels.join(",")),
        DomainSpec::Range(lo, hi) => format!("{lo} .. {hi}"),
        DomainSpec::Explicit(d) => d.to_string(),
    }
}

fn value_set(values: &[Value]) -> String {
    if values.len() == 1 {
        values[0].to_string()
    } else {
        let parts: Vec<String> = values.iter().map(Value::to_string).collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// The module parameter list: `input`, `output1..n`, then parameters.
pub fn module_params(spec: &ArchetypeSpec, arity: usize) -> Vec<String> {
    let mut out = Vec::new();
    if spec.upstream {
        out.push("input".to_string());
    }
    if spec.downstream.is_some() {
        out.extend((1..=arity).map(|k| format!("output{k}")));
    }
    out.extend(spec.params.iter().map(|p| p.name.clone()));
    out
}

/// Module body for `spec` with `arity` downstream components.
pub fn module_body(spec: &ArchetypeSpec, arity: usize, opts: EmitOptions) -> Result<String, EmitError> {
    let faithful = opts.faithful_listing;
    let var = &spec.var;
    let mut out = String::new();
    writeln!(out, "VAR\n  {var} : {};", domain_text(spec)).unwrap();
    if !spec.defines.is_empty() {
        out.push_str("DEFINE\n");
        for (name, e) in &spec.defines {
            match render(e, arity, faithful)? {
                Expr::Case(arms) => {
                    writeln!(out, "  {name} := case").unwrap();
                    for (g, v) in arms {
                        writeln!(out, "    {g} : {v};").unwrap();
                    }
                    out.push_str("  esac;\n");
                }
                e => writeln!(out, "  {name} := {e};").unwrap(),
            }
        }
    }

    let domain: Vec<Value> = spec.domain.values().collect();
    let init = (!domain.iter().all(|v| spec.initial.contains(v))).then(|| {
        let mut init: Vec<Value> = domain.iter().copied().filter(|v| spec.initial.contains(v)).collect();
        init.dedup();
        init
    });
    let choices: Vec<(Value, Vec<Value>)> =
        domain.iter().map(|&s| (s, spec.choice_targets(s, |_| true))).filter(|(_, t)| !t.is_empty()).collect();
    let unconstrained = domain.iter().all(|&s| {
        let t = spec.choice_targets(s, |_| true);
        domain.iter().all(|d| t.contains(d))
    });
    if init.is_none() && unconstrained {
        return Ok(out);
    }
    out.push_str("ASSIGN\n");
    if let Some(init) = &init {
        writeln!(out, "  init({var}) := {};", value_set(init)).unwrap();
    }
    if unconstrained {
        return Ok(out);
    }
    if init.is_some() {
        out.push('\n');
    }
    writeln!(out, "  next({var}) := case").unwrap();
    for t in &spec.transitions {
        let guard = render(&t.guard, arity, faithful)?;
        for (s, targets) in &choices {
            let first = match &t.target {
                Target::Stay => *s,
                Target::Value(v) => *v,
            };
            let set: Vec<Value> = domain.iter().copied().filter(|d| *d == first || targets.contains(d)).collect();
            let at = Expr::eq(Expr::Ref(var.clone()), Expr::Const(*s));
            let g = if guard.is_true() { at } else { Expr::and(guard.clone(), at) };
            writeln!(out, "    {g} : {};", value_set(&set)).unwrap();
        }
        let target = match &t.target {
            Target::Stay => var.clone(),
            Target::Value(v) => v.to_string(),
        };
        writeln!(out, "    {guard} : {target};").unwrap();
    }
    out.push_str("  esac;\n");
    Ok(out)
}

fn capitalized(v: Value) -> String {
    let s = v.to_string();
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => s,
    }
}

fn base_name(spec: &ArchetypeSpec, arity: usize) -> String {
    let tpl = template_defaults(spec.tag);
    let mut name = spec.tag.name().to_string();
    if spec.tag != Archetype::MergedLoadBank && spec.initial != tpl.initial && spec.initial.len() == 1 {
        name.push_str("Start");
        name.push_str(&capitalized(spec.initial[0]));
    }
    let has_faults = |s: &ArchetypeSpec| s.choices.iter().any(|c| c.kind == ChoiceKind::Fault);
    if has_faults(&tpl) && !has_faults(spec) {
        name.push_str("NoFault");
    }
    let nominal = if spec.tag == Archetype::Battery { 2 } else { 1 };
    if spec.downstream.is_some() && arity != nominal {
        write!(name, "_{arity}out").unwrap();
    }
    name
}

fn arity(m: &CompositeMachine, i: usize) -> usize {
    if m.instances[i].spec.downstream.is_some() {
        m.downstream[i].len()
    } else {
        0
    }
}

/// Distinct modules needed by `m`, sorted by archetype then name.
pub fn modules(m: &CompositeMachine, opts: EmitOptions) -> Result<Vec<SmvModule>, EmitError> {
    let mut found: Vec<SmvModule> = Vec::new();
    let mut by_body: BTreeMap<(Vec<String>, String), usize> = BTreeMap::new();
    let mut per_base: BTreeMap<String, usize> = BTreeMap::new();
    for (i, inst) in m.instances.iter().enumerate() {
        let n = arity(m, i);
        let params = module_params(&inst.spec, n);
        let body = module_body(&inst.spec, n, opts)?;
        let key = (params.clone(), body.clone());
        if let Some(&k) = by_body.get(&key) {
            found[k].instances.push(i);
            continue;
        }
        let base = base_name(&inst.spec, n);
        let taken = per_base.entry(base.clone()).or_insert(0);
        *taken += 1;
        let name = if *taken == 1 { base } else { format!("{base}_{taken}") };
        by_body.insert(key, found.len());
        found.push(SmvModule { name, tag: inst.spec.tag, params, body, instances: vec![i] });
    }
    found.sort_by(|a, b| (a.tag, &a.name).cmp(&(b.tag, &b.name)));
    Ok(found)
}

fn activity(m: &CompositeMachine, who: &str) -> String {
    let period = m.instance_index(who).and_then(|i| m.instances[i].period);
    match (period, m.clock) {
        (Some(p), Some(c)) if p / c.tick <= 1 => "TRUE".into(),
        (Some(p), Some(c)) => format!("((clock_phase mod {}) = 0)", p / c.tick),
        _ => "FALSE".into(),
    }
}

const FREE_INPUT_MODULE: &str = "MODULE FreeInput\nVAR\n  supplyingPower : boolean;\n";

/// `count` is reserved in NuSMV 2.6, so the emitted counter is `items`.
pub const CHANNEL_VAR: &str = "items";

const CHANNEL_MODULE: &str = "MODULE Channel(produce, consume, capacity)
VAR
  items : 0 .. capacity + 1;
ASSIGN
  init(items) := 0;

  next(items) := case
    ((produce & !(consume)) & (items < capacity + 1)) : items + 1;
    ((consume & !(produce)) & (items > 0)) : items - 1;
    TRUE : items;
  esac;
";

/// Full NuSMV file: name map, modules, `main`, and one `LTLSPEC` per assertion.
pub fn emit(m: &CompositeMachine, asserts: &[Assertion], opts: EmitOptions) -> Result<String, EmitError> {
    let mut out = String::new();
    let mapped: Vec<_> = m.instances.iter().filter_map(|i| Some((&i.name, i.origin.as_ref()?))).collect();
    if !mapped.is_empty() {
        out.push_str("-- name map\n");
        for (name, origin) in mapped {
            writeln!(out, "--   {name} = {origin}").unwrap();
        }
        out.push('\n');
    }
    let mods = modules(m, opts)?;
    let mut module_of = vec![0; m.instances.len()];
    for (k, md) in mods.iter().enumerate() {
        for &i in &md.instances {
            module_of[i] = k;
        }
        out.push_str(&md.text());
        out.push('\n');
    }
    if !m.free_inputs.is_empty() {
        out.push_str(FREE_INPUT_MODULE);
        out.push('\n');
    }
    if !m.channels.is_empty() {
        out.push_str(CHANNEL_MODULE);
        out.push('\n');
    }

    out.push_str("MODULE main\n");
    let mut vars = Vec::new();
    for (i, inst) in m.instances.iter().enumerate() {
        let md = &mods[module_of[i]];
        let mut args = Vec::new();
        for p in &md.params {
            if p == "input" {
                args.push(match m.upstream[i] {
                    Some(j) => m.instances[j].name.clone(),
                    None => format!("{}_free", inst.name),
                });
            } else if let Some(k) = p.strip_prefix("output").and_then(|k| k.parse::<usize>().ok()) {
                args.push(m.instances[m.downstream[i][k - 1]].name.clone());
            } else {
                let v = inst
                    .spec
                    .param(p)
                    .ok_or_else(|| EmitError::UnsupportedConstruct(format!("unbound parameter `{p}`")))?;
                args.push(v.to_string());
            }
        }
        if args.is_empty() {
            vars.push(format!("  {} : {};", inst.name, md.name));
        } else {
            vars.push(format!("  {} : {}({});", inst.name, md.name, args.join(", ")));
        }
    }
    let mut free: Vec<&str> = m.free_inputs.iter().map(|f| f.name.as_str()).collect();
    free.dedup();
    for f in free {
        vars.push(format!("  {f} : FreeInput;"));
    }
    for ch in &m.channels {
        vars.push(format!(
            "  {} : Channel({}, {}, {});",
            ch.name,
            activity(m, &ch.producer),
            activity(m, &ch.consumer),
            ch.capacity
        ));
    }
    if let Some(c) = m.clock {
        vars.push(format!("  clock_phase : 0 .. {};", c.phases() - 1));
    }
    if !vars.is_empty() {
        out.push_str("VAR\n");
        for v in vars {
            out.push_str(&v);
            out.push('\n');
        }
    }
    if let Some(c) = m.clock {
        writeln!(out, "DEFINE\n  clock := clock_phase * {};", c.tick).unwrap();
        writeln!(
            out,
            "ASSIGN\n  init(clock_phase) := 0;\n  next(clock_phase) := (clock_phase + 1) mod {};",
            c.phases()
        )
        .unwrap();
    }
    for a in asserts {
        let mut text = a.smv_text();
        for ch in &m.channels {
            text = text.replace(&format!("{}.count", ch.name), &format!("{}.{CHANNEL_VAR}", ch.name));
        }
        writeln!(out, "\n-- {}\nLTLSPEC {}", a.provenance, text).unwrap();
    }
    Ok(out)
}

/// Header printed above a counterexample to `f`.
pub fn falsified_header(f: &Formula) -> String {
    format!("-- specification  {}  is false\n-- as demonstrated by the following execution sequence", f.banner())
}

/// NuSMV-style trace text. The first state is printed in full, later
/// states only list variables whose value changed.
pub fn emit_trace(t: &Trace, header: &str) -> String {
    let mut out = String::new();
    if !header.is_empty() {
        out.push_str(header.trim_end());
        out.push('\n');
    }
    let (description, kind) = match t.kind {
        TraceKind::Counterexample => ("LTL Counterexample", "Counterexample"),
        TraceKind::Plan => ("LTL Counterexample (plan)", "Counterexample"),
        TraceKind::Simulation => ("Simulation Trace", "Simulation"),
    };
    writeln!(out, "Trace Description: {description}\nTrace Type: {kind}").unwrap();
    for (k, step) in t.steps.iter().enumerate() {
        if t.loop_start == Some(k) {
            out.push_str("-- Loop starts here\n");
        }
        writeln!(out, "-> State: 1.{} <-", k + 1).unwrap();
        for (v, value) in step.iter().enumerate() {
            if k == 0 || t.steps[k - 1][v] != *value {
                writeln!(out, "{} = {value}", t.vars[v]).unwrap();
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// Parses text produced by [`emit_trace`] (or NuSMV itself) back into a
/// trace, filling unchanged variables from the previous state.
pub fn parse_trace(text: &str) -> Result<Trace, TraceParseError> {
    let mut trace = Trace { kind: TraceKind::Counterexample, vars: Vec::new(), steps: Vec::new(), loop_start: None };
    let mut pending_loop = false;
    let mut plan = false;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| TraceParseError { line: n + 1, message };
        if line.is_empty() {
            continue;
        }
        if line.starts_with("-- Loop starts here") {
            pending_loop = true;
            continue;
        }
        if line.starts_with("--") || line.starts_with('*') {
            continue;
        }
        if let Some(d) = line.strip_prefix("Trace Description:") {
            plan = d.contains("plan");
            continue;
        }
        if let Some(kind) = line.strip_prefix("Trace Type:") {
            trace.kind = match kind.trim() {
                "Simulation" => TraceKind::Simulation,
                _ if plan => TraceKind::Plan,
                _ => TraceKind::Counterexample,
            };
            continue;
        }
        if line.starts_with("->") {
            if !line.contains("State:") {
                continue;
            }
            if pending_loop {
                trace.loop_start = Some(trace.steps.len());
                pending_loop = false;
            }
            let prev = trace.steps.last().cloned().unwrap_or_default();
            trace.steps.push(prev);
            continue;
        }
        let Some((name, value)) = line.split_once(" = ") else {
            return Err(err(format!("expected `name = value`, got `{line}`")));
        };
        let first = trace.steps.len() == 1;
        let Some(step) = trace.steps.last_mut() else {
            return Err(err("assignment before the first state".into()));
        };
        let value = Value::parse(value.trim());
        let name = name.trim();
        match trace.vars.iter().position(|v| v == name) {
            Some(i) => step[i] = value,
            None if first => {
                trace.vars.push(name.to_string());
                step.push(value);
            }
            None => return Err(err(format!("`{name}` does not appear in the first state"))),
        }
    }
    Ok(trace)
}

/// Splits a file holding several traces (one per `Trace Description:`)
/// and parses each.
pub fn parse_traces(text: &str) -> Result<Vec<Trace>, TraceParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with("Trace Description:"))
        .map(|(i, _)| i)
        .collect();
    if starts.is_empty() {
        return parse_trace(text).map(|t| if t.steps.is_empty() { vec![] } else { vec![t] });
    }
    let mut out = Vec::new();
    for (k, &from) in starts.iter().enumerate() {
        let to = starts.get(k + 1).copied().unwrap_or(lines.len());
        let chunk = lines[from..to].join("\n");
        out.push(parse_trace(&chunk).map_err(|e| TraceParseError { line: e.line + from, message: e.message })?);
    }
    Ok(out)
}
