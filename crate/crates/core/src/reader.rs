//! Memory operations, pipeline graphs and the request grammar.
//!
//! ```text
//! request  := clause ("then" clause)*
//! clause   := "remember" text ["as" type] ["labels" list]
//!           | "recall" text ["labels" list] ["k" N]
//!           | "update" target "set" field "=" value
//!           | "forget" target | "history" target | "transform" target
//!           | "audit" ("principal=" p | "action=" a | "since=" ms | "until=" ms)*
//! target   := 32-hex cube id | "@" N       (N-th cube produced by the previous clause)
//! field    := "text" | "labels" | "semantic_type"
//! ```
//!
//! Words are whitespace-separated; a `"…"` segment (with `\"` and `\\`
//! escapes) is literal and never a keyword. Clause options may appear in
//! any order, at most once each.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::governance::{AuditAction, AuditRecord};
use crate::ids::{is_valid_label, CubeId, PrincipalId, Timestamp};
use crate::memcube::{Payload, SemanticType};
use crate::operator::TagExpr;

pub const DEFAULT_K: usize = 5;

/// Where an op finds the cube it acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Id(CubeId),
    /// Supplied by the single binding edge into this node.
    Bound,
}

/// Field changes for an update; `None` leaves the field alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub text: Option<String>,
    pub labels: Option<BTreeSet<String>>,
    pub semantic_type: Option<SemanticType>,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.text.is_none() && self.labels.is_none() && self.semantic_type.is_none()
    }
}

/// Audit query filter; time bounds are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogFilter {
    pub principal: Option<PrincipalId>,
    pub action: Option<AuditAction>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl LogFilter {
    pub fn matches(&self, r: &AuditRecord) -> bool {
        self.principal.as_ref().is_none_or(|p| *p == r.principal)
            && self.action.is_none_or(|a| a == r.action)
            && self.since.is_none_or(|s| r.at >= s)
            && self.until.is_none_or(|u| r.at <= u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MemoryOp {
    Query {
        text: String,
        labels: BTreeSet<String>,
        k: usize,
        expr: Option<TagExpr>,
    },
    Create {
        payload: Payload,
        semantic_type: SemanticType,
        labels: BTreeSet<String>,
    },
    Update { target: Target, patch: Patch },
    Archive { target: Target },
    Provenance { target: Target },
    LogQuery { filter: LogFilter },
    Transform { target: Target },
}

/// What a node produces, for binding checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Cubes,
    Lineage,
    Records,
}

impl MemoryOp {
    pub fn output_kind(&self) -> OutputKind {
        match self {
            MemoryOp::Provenance { .. } => OutputKind::Lineage,
            MemoryOp::LogQuery { .. } => OutputKind::Records,
            _ => OutputKind::Cubes,
        }
    }

    pub fn target(&self) -> Option<Target> {
        match self {
            MemoryOp::Update { target, .. }
            | MemoryOp::Archive { target }
            | MemoryOp::Provenance { target }
            | MemoryOp::Transform { target } => Some(*target),
            _ => None,
        }
    }

    pub fn with_target(mut self, t: Target) -> Self {
        if let MemoryOp::Update { target, .. }
        | MemoryOp::Archive { target }
        | MemoryOp::Provenance { target }
        | MemoryOp::Transform { target } = &mut self
        {
            *target = t;
        }
        self
    }

    pub fn is_write(&self) -> bool {
        matches!(
            self,
            MemoryOp::Create { .. } | MemoryOp::Update { .. } | MemoryOp::Archive { .. } | MemoryOp::Transform { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            MemoryOp::Query { .. } => "query",
            MemoryOp::Create { .. } => "create",
            MemoryOp::Update { .. } => "update",
            MemoryOp::Archive { .. } => "archive",
            MemoryOp::Provenance { .. } => "provenance",
            MemoryOp::LogQuery { .. } => "logquery",
            MemoryOp::Transform { .. } => "transform",
        }
    }
}

pub type NodeId = u32;

/// Feeds the `index`-th cube of the producer's output into the consumer's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub binding: Option<Binding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineGraph {
    pub nodes: BTreeMap<NodeId, MemoryOp>,
    pub edges: Vec<PipelineEdge>,
    pub transactional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("pipeline graph has a cycle")]
    CycleDetected,
    #[error("edge {from}->{to} references an unknown node")]
    UnknownNode { from: NodeId, to: NodeId },
    #[error("binding {from}->{to} does not type-check")]
    BindingTypeMismatch { from: NodeId, to: NodeId },
    #[error("node {0} needs exactly one binding")]
    UnboundTarget(NodeId),
}

impl PipelineGraph {
    pub fn new(transactional: bool) -> Self {
        PipelineGraph { nodes: BTreeMap::new(), edges: Vec::new(), transactional }
    }

    /// A chain where each op depends on the previous one.
    pub fn chain(ops: Vec<MemoryOp>, bindings: &[Option<Binding>], transactional: bool) -> Self {
        let mut g = PipelineGraph::new(transactional);
        for (i, op) in ops.into_iter().enumerate() {
            let id = i as NodeId;
            g.nodes.insert(id, op);
            if i > 0 {
                g.edges.push(PipelineEdge { from: id - 1, to: id, binding: bindings.get(i).copied().flatten() });
            }
        }
        g
    }

    /// The binding edge into `node`, if any.
    pub fn binding_into(&self, node: NodeId) -> Option<&PipelineEdge> {
        self.edges.iter().find(|e| e.to == node && e.binding.is_some())
    }

    pub fn predecessors(&self, node: NodeId) -> BTreeSet<NodeId> {
        self.edges.iter().filter(|e| e.to == node).map(|e| e.from).collect()
    }

    /// Checks references, binding types and acyclicity, returning the nodes
    /// grouped in dependency levels (each level ascending by id).
    pub fn validate(&self) -> Result<Vec<Vec<NodeId>>, PipelineError> {
        for e in &self.edges {
            let (Some(src), Some(dst)) = (self.nodes.get(&e.from), self.nodes.get(&e.to)) else {
                return Err(PipelineError::UnknownNode { from: e.from, to: e.to });
            };
            if e.binding.is_some() && (src.output_kind() != OutputKind::Cubes || dst.target() != Some(Target::Bound)) {
                return Err(PipelineError::BindingTypeMismatch { from: e.from, to: e.to });
            }
        }
        for (id, op) in &self.nodes {
            let n = self.edges.iter().filter(|e| e.to == *id && e.binding.is_some()).count();
            if (op.target() == Some(Target::Bound)) != (n == 1) {
                return Err(PipelineError::UnboundTarget(*id));
            }
        }
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|k| (*k, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(&e.to).expect("checked") += 1;
        }
        let mut levels = Vec::new();
        let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut seen = 0;
        while !ready.is_empty() {
            seen += ready.len();
            let mut next = BTreeSet::new();
            for n in &ready {
                for e in self.edges.iter().filter(|e| e.from == *n) {
                    let d = indeg.get_mut(&e.to).expect("checked");
                    *d -= 1;
                    if *d == 0 {
                        next.insert(e.to);
                    }
                }
            }
            levels.push(core::mem::take(&mut ready));
            ready = next.into_iter().collect();
        }
        if seen != self.nodes.len() {
            return Err(PipelineError::CycleDetected);
        }
        Ok(levels)
    }

    /// True when `order` lists every node once and respects every edge.
    pub fn is_topological(&self, order: &[NodeId]) -> bool {
        let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        pos.len() == order.len()
            && pos.len() == self.nodes.len()
            && self.nodes.keys().all(|k| pos.contains_key(k))
            && self.edges.iter().all(|e| pos[&e.from] < pos[&e.to])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParserKind {
    Grammar,
    Adapter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRequest {
    pub graph: PipelineGraph,
    pub source_text: String,
    pub parser: ParserKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub position: usize,
    pub expected: Vec<&'static str>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at {}: expected {}", self.position, self.expected.join(" | "))
    }
}

/// Alternative front ends (e.g. model-backed) produce the same output type.
pub trait RequestParser {
    fn parse(&self, text: &str) -> Result<ParsedRequest, ParseError>;
}

pub struct GrammarParser;

impl RequestParser for GrammarParser {
    fn parse(&self, text: &str) -> Result<ParsedRequest, ParseError> {
        parse_request(text)
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    quoted: bool,
    pos: usize,
}

impl Token {
    fn is_word(&self, w: &str) -> bool {
        !self.quoted && self.text == w
    }
}

fn err(position: usize, expected: &[&'static str]) -> ParseError {
    ParseError { position, expected: expected.to_vec() }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut text = String::new();
        let mut quoted = false;
        while let Some(&(_, c)) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            chars.next();
            if c != '"' {
                text.push(c);
                continue;
            }
            quoted = true;
            loop {
                match chars.next() {
                    None => return Err(err(src.len(), &["\""])),
                    Some((_, '"')) => break,
                    Some((j, '\\')) => match chars.next() {
                        Some((_, e @ ('"' | '\\'))) => text.push(e),
                        _ => return Err(err(j, &["\\\"", "\\\\"])),
                    },
                    Some((_, ch)) => text.push(ch),
                }
            }
        }
        out.push(Token { text, quoted, pos: start });
    }
    Ok(out)
}

const VERBS: &[&str] = &["remember", "recall", "update", "forget", "history", "transform", "audit"];

struct Cursor<'a> {
    toks: &'a [Token],
    i: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.i)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.i);
        self.i += t.is_some() as usize;
        t
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn at_boundary(&self) -> bool {
        self.peek().is_none_or(|t| t.is_word("then"))
    }

    /// Words up to a keyword or clause boundary, joined by single spaces.
    fn text_until(&mut self, keywords: &[&str]) -> Option<String> {
        let mut words = Vec::new();
        while let Some(t) = self.peek() {
            if t.is_word("then") || (!t.quoted && keywords.contains(&t.text.as_str())) {
                break;
            }
            words.push(t.text.as_str());
            self.i += 1;
        }
        (!words.is_empty()).then(|| words.join(" "))
    }
}

fn parse_labels(c: &mut Cursor<'_>, keywords: &[&str]) -> Result<BTreeSet<String>, ParseError> {
    let pos = c.pos();
    let mut out = BTreeSet::new();
    while let Some(t) = c.peek() {
        if t.is_word("then") || (!t.quoted && keywords.contains(&t.text.as_str())) {
            break;
        }
        for l in t.text.split(',').filter(|s| !s.is_empty()) {
            if !is_valid_label(l) {
                return Err(err(t.pos, &["label"]));
            }
            out.insert(l.to_string());
        }
        c.i += 1;
    }
    if out.is_empty() {
        return Err(err(pos, &["label"]));
    }
    Ok(out)
}

fn parse_target(c: &mut Cursor<'_>, clause: usize) -> Result<(Target, Option<Binding>), ParseError> {
    let pos = c.pos();
    let expected: &[&'static str] = &["cube id", "@N"];
    let t = match c.peek() {
        Some(t) if !t.is_word("then") => t,
        _ => return Err(err(pos, expected)),
    };
    c.i += 1;
    if let Some(n) = t.text.strip_prefix('@').filter(|_| !t.quoted) {
        let index = parse_uint(n).ok_or_else(|| err(pos, &["@N"]))?;
        if clause == 0 {
            return Err(err(pos, &["cube id"]));
        }
        return Ok((Target::Bound, Some(Binding { index: index as usize })));
    }
    let id = t.text.parse::<CubeId>().map_err(|_| err(pos, expected))?;
    Ok((Target::Id(id), None))
}

/// Decimal without sign or leading zeros.
fn parse_uint(s: &str) -> Option<u64> {
    let plain = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    plain.then(|| s.parse().ok()).flatten()
}

fn parse_clause(c: &mut Cursor<'_>, clause: usize) -> Result<(MemoryOp, Option<Binding>), ParseError> {
    let pos = c.pos();
    let verb = match c.next() {
        Some(t) if !t.quoted && VERBS.contains(&t.text.as_str()) => t.text.as_str(),
        _ => return Err(err(pos, VERBS)),
    };
    let mut binding = None;
    let op = match verb {
        "remember" => {
            let text = c.text_until(&["as", "labels"]).ok_or_else(|| err(c.pos(), &["text"]))?;
            let mut semantic_type = None;
            let mut labels = None;
            while !c.at_boundary() {
                let kpos = c.pos();
                let t = c.next().expect("not at boundary");
                if t.is_word("as") && semantic_type.is_none() {
                    let vpos = c.pos();
                    let v = c.next().filter(|v| !v.is_word("then")).ok_or_else(|| err(vpos, &["semantic type"]))?;
                    semantic_type = Some(v.text.parse::<SemanticType>().map_err(|_| err(vpos, &["semantic type"]))?);
                } else if t.is_word("labels") && labels.is_none() {
                    labels = Some(parse_labels(c, &["as"])?);
                } else {
                    return Err(err(kpos, &["as", "labels", "then"]));
                }
            }
            MemoryOp::Create {
                payload: Payload::plaintext(text),
                semantic_type: semantic_type.unwrap_or(SemanticType::Other),
                labels: labels.unwrap_or_default(),
            }
        }
        "recall" => {
            let text = c.text_until(&["labels", "k"]).ok_or_else(|| err(c.pos(), &["query"]))?;
            let mut labels = None;
            let mut k = None;
            while !c.at_boundary() {
                let kpos = c.pos();
                let t = c.next().expect("not at boundary");
                if t.is_word("labels") && labels.is_none() {
                    labels = Some(parse_labels(c, &["k"])?);
                } else if t.is_word("k") && k.is_none() {
                    let vpos = c.pos();
                    let n = c
                        .next()
                        .filter(|v| !v.quoted)
                        .and_then(|v| parse_uint(&v.text))
                        .filter(|n| *n > 0)
                        .ok_or_else(|| err(vpos, &["positive integer"]))?;
                    k = Some(n as usize);
                } else {
                    return Err(err(kpos, &["labels", "k", "then"]));
                }
            }
            MemoryOp::Query { text, labels: labels.unwrap_or_default(), k: k.unwrap_or(DEFAULT_K), expr: None }
        }
        "update" => {
            let (target, b) = parse_target(c, clause)?;
            binding = b;
            let spos = c.pos();
            if !c.next().is_some_and(|t| t.is_word("set")) {
                return Err(err(spos, &["set"]));
            }
            let apos = c.pos();
            let fields: &[&'static str] = &["text=", "labels=", "semantic_type="];
            let t = c.next().filter(|t| !t.is_word("then")).ok_or_else(|| err(apos, fields))?;
            let (field, value) = t.text.split_once('=').ok_or_else(|| err(apos, fields))?;
            let mut patch = Patch::default();
            match field {
                "text" => patch.text = Some(value.to_string()),
                "labels" => {
                    let mut set = BTreeSet::new();
                    for l in value.split(',').filter(|s| !s.is_empty()) {
                        if !is_valid_label(l) {
                            return Err(err(apos, &["label"]));
                        }
                        set.insert(l.to_string());
                    }
                    patch.labels = Some(set);
                }
                "semantic_type" => {
                    patch.semantic_type = Some(value.parse().map_err(|_| err(apos, &["semantic type"]))?)
                }
                _ => return Err(err(apos, fields)),
            }
            MemoryOp::Update { target, patch }
        }
        "forget" | "history" | "transform" => {
            let (target, b) = parse_target(c, clause)?;
            binding = b;
            match verb {
                "forget" => MemoryOp::Archive { target },
                "history" => MemoryOp::Provenance { target },
                _ => MemoryOp::Transform { target },
            }
        }
        _ => {
            let mut filter = LogFilter::default();
            let keys: &[&'static str] = &["principal=", "action=", "since=", "until=", "then"];
            while !c.at_boundary() {
                let kpos = c.pos();
                let t = c.next().expect("not at boundary");
                let (k, v) = t.text.split_once('=').ok_or_else(|| err(kpos, keys))?;
                let dup = || err(kpos, keys);
                match k {
                    "principal" if filter.principal.is_none() => {
                        filter.principal = Some(PrincipalId::new(v).map_err(|_| err(kpos, &["principal"]))?)
                    }
                    "action" if filter.action.is_none() => {
                        filter.action = Some(v.parse().map_err(|_| err(kpos, &["audit action"]))?)
                    }
                    "since" if filter.since.is_none() => {
                        filter.since = Some(parse_uint(v).ok_or_else(|| err(kpos, &["timestamp"]))?)
                    }
                    "until" if filter.until.is_none() => {
                        filter.until = Some(parse_uint(v).ok_or_else(|| err(kpos, &["timestamp"]))?)
                    }
                    _ => return Err(dup()),
                }
            }
            MemoryOp::LogQuery { filter }
        }
    };
    if !c.at_boundary() {
        return Err(err(c.pos(), &["then"]));
    }
    Ok((op, binding))
}

/// Parses a request into a chain pipeline. Parsed pipelines are transactional.
pub fn parse_request(text: &str) -> Result<ParsedRequest, ParseError> {
    let toks = tokenize(text)?;
    let mut c = Cursor { toks: &toks, i: 0, end: text.len() };
    let mut ops: Vec<MemoryOp> = Vec::new();
    let mut bindings = Vec::new();
    loop {
        let clause_pos = c.pos();
        let (op, binding) = parse_clause(&mut c, ops.len())?;
        if binding.is_some() && ops.last().is_some_and(|p| p.output_kind() != OutputKind::Cubes) {
            // the target position: the token right after the verb
            let pos = toks.iter().find(|t| t.pos > clause_pos).map_or(clause_pos, |t| t.pos);
            return Err(err(pos, &["cube id"]));
        }
        ops.push(op);
        bindings.push(binding);
        match c.next() {
            None => break,
            Some(t) if t.is_word("then") => {}
            Some(t) => return Err(err(t.pos, &["then"])),
        }
    }
    Ok(ParsedRequest {
        graph: PipelineGraph::chain(ops, &bindings, true),
        source_text: text.to_string(),
        parser: ParserKind::Grammar,
    })
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

/// Free text, bare when it re-tokenizes to the same words.
fn render_text(s: &str, keywords: &[&str]) -> String {
    let bare = !s.is_empty()
        && s.split(' ').all(|w| {
            !w.is_empty() && w != "then" && !keywords.contains(&w) && !w.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\')
        });
    if bare {
        s.to_string()
    } else {
        quote(s)
    }
}

/// A single token value, quoted when needed.
fn render_value(s: &str) -> String {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\') {
        quote(s)
    } else {
        s.to_string()
    }
}

fn render_labels(labels: &BTreeSet<String>, keywords: &[&str]) -> String {
    let joined = labels.iter().map(String::as_str).collect::<Vec<_>>().join(",");
    if joined == "then" || keywords.contains(&joined.as_str()) {
        quote(&joined)
    } else {
        joined
    }
}

fn render_target(t: Target, binding: Option<Binding>) -> String {
    match (t, binding) {
        (Target::Id(id), _) => id.to_string(),
        (Target::Bound, Some(b)) => alloc::format!("@{}", b.index),
        (Target::Bound, None) => "@0".to_string(),
    }
}

/// Renders one clause. Returns `None` for ops outside the grammar (non-plaintext
/// creates, structural queries, multi-field patches).
pub fn render_clause(op: &MemoryOp, binding: Option<Binding>) -> Option<String> {
    use alloc::format;
    Some(match op {
        MemoryOp::Create { payload: Payload::Plaintext { text, format_tag }, semantic_type, labels }
            if format_tag == "text" =>
        {
            let mut s = format!("remember {}", render_text(text, &["as", "labels"]));
            if *semantic_type != SemanticType::Other {
                s += &format!(" as {}", semantic_type.as_str());
            }
            if !labels.is_empty() {
                s += &format!(" labels {}", render_labels(labels, &["as"]));
            }
            s
        }
        MemoryOp::Query { text, labels, k, expr: None } => {
            let mut s = format!("recall {}", render_text(text, &["labels", "k"]));
            if !labels.is_empty() {
                s += &format!(" labels {}", render_labels(labels, &["k"]));
            }
            if *k != DEFAULT_K {
                s += &format!(" k {k}");
            }
            s
        }
        MemoryOp::Update { target, patch } => {
            let assign = match (&patch.text, &patch.labels, &patch.semantic_type) {
                (Some(t), None, None) => format!("text={}", render_value(t)),
                (None, Some(l), None) => {
                    format!("labels={}", render_value(&l.iter().map(String::as_str).collect::<Vec<_>>().join(",")))
                }
                (None, None, Some(st)) => format!("semantic_type={}", st.as_str()),
                _ => return None,
            };
            format!("update {} set {assign}", render_target(*target, binding))
        }
        MemoryOp::Archive { target } => format!("forget {}", render_target(*target, binding)),
        MemoryOp::Provenance { target } => format!("history {}", render_target(*target, binding)),
        MemoryOp::Transform { target } => format!("transform {}", render_target(*target, binding)),
        MemoryOp::LogQuery { filter } => {
            let mut s = String::from("audit");
            if let Some(p) = &filter.principal {
                s += &format!(" principal={p}");
            }
            if let Some(a) = filter.action {
                s += &format!(" action={}", format!("{a}").to_ascii_lowercase());
            }
            if let Some(t) = filter.since {
                s += &format!(" since={t}");
            }
            if let Some(t) = filter.until {
                s += &format!(" until={t}");
            }
            s
        }
        _ => return None,
    })
}

/// Renders a chain graph (edges exactly `i -> i+1`) back to request text.
pub fn render_request(g: &PipelineGraph) -> Option<String> {
    let ids: Vec<NodeId> = g.nodes.keys().copied().collect();
    if ids.iter().enumerate().any(|(i, id)| *id != i as NodeId) || g.edges.len() != ids.len().saturating_sub(1) {
        return None;
    }
    let mut parts = Vec::with_capacity(ids.len());
    for (i, op) in g.nodes.values().enumerate() {
        let binding = if i == 0 {
            None
        } else {
            let e = g.edges.iter().find(|e| e.to == i as NodeId && e.from == i as NodeId - 1)?;
            e.binding
        };
        parts.push(render_clause(op, binding)?);
    }
    Some(parts.join(" then "))
}

/// Parses a standalone tag expression for a structural query.
pub fn parse_structural(s: &str) -> Result<TagExpr, ParseError> {
    TagExpr::parse(s).map_err(|e| ParseError { position: e.position, expected: vec!["tag expression"] })
}
