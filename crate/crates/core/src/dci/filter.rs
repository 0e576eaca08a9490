//! Conjunctive filters over stored traces.
//!
//! A filter is a whitespace-separated list of `field op value` terms, all of
//! which must hold. Operators are `=`, `!=`, `<`, `<=`, `>`, `>=`. Values
//! may be double-quoted; the bare word `null` stands for an absent field, so
//! `geo=null` selects unenriched traces and `geo!=null` the rest. Ordered
//! comparisons never match an absent field, while `!=` against a concrete
//! value does.
//!
//! ```text
//! event_kind=CONNECTION geo="ZZ" ts_ms>=1000 ts_ms<2000
//! ```

use std::cmp::Ordering;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use super::{DciError, EnrichedTrace, TraceEventKind, TraceSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    TraceId,
    TsMs,
    Source,
    EventKind,
    Ip,
    Port,
    PayloadHash,
    Ttl,
    Win,
    Peer,
    Geo,
    Asn,
    Rdns,
    OsGuess,
    ClusterId,
}

impl Field {
    const NAMES: [(&'static str, Field); 16] = [
        ("trace_id", Field::TraceId),
        ("ts_ms", Field::TsMs),
        ("source", Field::Source),
        ("event_kind", Field::EventKind),
        ("kind", Field::EventKind),
        ("ip", Field::Ip),
        ("port", Field::Port),
        ("payload_hash", Field::PayloadHash),
        ("ttl", Field::Ttl),
        ("win", Field::Win),
        ("peer", Field::Peer),
        ("geo", Field::Geo),
        ("asn", Field::Asn),
        ("rdns", Field::Rdns),
        ("os_guess", Field::OsGuess),
        ("cluster_id", Field::ClusterId),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, f)| *f == self).map(|(n, _)| *n).unwrap_or("?")
    }

    fn numeric(self) -> bool {
        matches!(
            self,
            Field::TraceId | Field::TsMs | Field::Port | Field::Ttl | Field::Win | Field::Asn | Field::ClusterId
        )
    }

    /// Reads this field from a trace; `None` when absent.
    pub fn extract(self, t: &EnrichedTrace) -> Option<Value> {
        let r = &t.base.record;
        match self {
            Field::TraceId => Some(Value::Int(t.base.trace_id)),
            Field::TsMs => Some(Value::Int(r.ts_ms)),
            Field::Source => Some(Value::Str(r.source.to_string())),
            Field::EventKind => Some(Value::Str(r.event_kind.as_str().to_string())),
            Field::Ip => r.ip.map(Value::Ip),
            Field::Port => r.port.map(|p| Value::Int(p.into())),
            Field::PayloadHash => r.payload_hash.clone().map(Value::Str),
            Field::Ttl => r.ttl.map(|v| Value::Int(v.into())),
            Field::Win => r.win.map(|v| Value::Int(v.into())),
            Field::Peer => r.peer.clone().map(Value::Str),
            Field::Geo => t.geo.clone().map(Value::Str),
            Field::Asn => t.asn.map(|v| Value::Int(v.into())),
            Field::Rdns => t.rdns.clone().map(Value::Str),
            Field::OsGuess => t.os_guess.clone().map(Value::Str),
            Field::ClusterId => t.cluster_id.map(|v| Value::Int(v.into())),
        }
    }
}

impl FromStr for Field {
    type Err = DciError;
    fn from_str(s: &str) -> Result<Self, DciError> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, f)| *f)
            .ok_or_else(|| DciError::MalformedFilter(format!("unknown field {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn as_str(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            Op::Eq => ord == Ordering::Equal,
            Op::Ne => ord != Ordering::Equal,
            Op::Lt => ord == Ordering::Less,
            Op::Le => ord != Ordering::Greater,
            Op::Gt => ord == Ordering::Greater,
            Op::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Int(u64),
    Ip(IpAddr),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Ip(ip) => write!(f, "{ip}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub field: Field,
    pub op: Op,
    /// `None` is the `null` literal.
    pub value: Option<Value>,
}

impl Predicate {
    pub fn matches(&self, t: &EnrichedTrace) -> bool {
        let actual = self.field.extract(t);
        match (&actual, &self.value) {
            (None, None) => self.op == Op::Eq,
            (Some(_), None) => self.op == Op::Ne,
            (None, Some(_)) => self.op == Op::Ne,
            (Some(a), Some(v)) => self.op.holds(a.cmp(v)),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Some(v) => write!(f, "{}{}{}", self.field.name(), self.op.as_str(), v),
            None => write!(f, "{}{}null", self.field.name(), self.op.as_str()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Filter {
    pub predicates: Vec<Predicate>,
}

impl Filter {
    pub fn all() -> Self {
        Filter::default()
    }

    pub fn and(mut self, field: Field, op: Op, value: Option<Value>) -> Self {
        self.predicates.push(Predicate { field, op, value });
        self
    }

    pub fn matches(&self, t: &EnrichedTrace) -> bool {
        self.predicates.iter().all(|p| p.matches(t))
    }

    /// Inclusive `ts_ms` bounds implied by the predicates.
    pub fn ts_bounds(&self) -> (u64, u64) {
        let (mut lo, mut hi) = (0u64, u64::MAX);
        for p in self.predicates.iter().filter(|p| p.field == Field::TsMs) {
            let Some(Value::Int(v)) = p.value else { continue };
            match p.op {
                Op::Eq => {
                    lo = lo.max(v);
                    hi = hi.min(v);
                }
                Op::Ge => lo = lo.max(v),
                Op::Gt => lo = lo.max(v.saturating_add(1)),
                Op::Le => hi = hi.min(v),
                Op::Lt if v == 0 => return (1, 0),
                Op::Lt => hi = hi.min(v - 1),
                Op::Ne => {}
            }
        }
        (lo, hi)
    }

    /// Concrete values required by `field=value` terms.
    pub fn equalities(&self, field: Field) -> impl Iterator<Item = &Value> {
        self.predicates
            .iter()
            .filter(move |p| p.field == field && p.op == Op::Eq)
            .filter_map(|p| p.value.as_ref())
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.predicates.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl FromStr for Filter {
    type Err = DciError;
    fn from_str(s: &str) -> Result<Self, DciError> {
        let predicates = tokenize(s)?.iter().map(|t| parse_term(t)).collect::<Result<_, _>>()?;
        Ok(Filter { predicates })
    }
}

#[derive(Debug)]
struct Term {
    text: String,
    /// Byte offset in `text` where a quoted value began, if any.
    quoted_from: Option<usize>,
}

fn tokenize(s: &str) -> Result<Vec<Term>, DciError> {
    let mut terms = Vec::new();
    let mut chars = s.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.peek().is_none() {
            return Ok(terms);
        }
        let mut text = String::new();
        let mut quoted_from = None;
        while let Some(c) = chars.next_if(|c| !c.is_whitespace()) {
            if c != '"' {
                text.push(c);
                continue;
            }
            if quoted_from.is_some() {
                return Err(DciError::MalformedFilter(format!("second quoted value in term starting {text:?}")));
            }
            quoted_from = Some(text.len());
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e) => text.push(e),
                        None => return Err(DciError::MalformedFilter("dangling escape".into())),
                    },
                    Some(c) => text.push(c),
                    None => return Err(DciError::MalformedFilter("unterminated quote".into())),
                }
            }
        }
        terms.push(Term { text, quoted_from });
    }
}

fn parse_term(term: &Term) -> Result<Predicate, DciError> {
    let t = term.text.as_str();
    let bad = |m: &str| DciError::MalformedFilter(format!("{m} in term {t:?}"));
    let at = t.find(['=', '!', '<', '>']).ok_or_else(|| bad("missing operator"))?;
    if at == 0 {
        return Err(bad("missing field"));
    }
    if term.quoted_from.is_some_and(|q| q <= at) {
        return Err(bad("quoted field name"));
    }
    let rest = &t[at..];
    let (op, len) = [("!=", Op::Ne), ("<=", Op::Le), (">=", Op::Ge), ("=", Op::Eq), ("<", Op::Lt), (">", Op::Gt)]
        .into_iter()
        .find(|(s, _)| rest.starts_with(s))
        .map(|(s, op)| (op, s.len()))
        .ok_or_else(|| bad("bad operator"))?;
    let field: Field = t[..at].parse()?;
    let raw = &t[at + len..];
    let quoted = term.quoted_from.is_some();
    if raw.is_empty() && !quoted {
        return Err(bad("missing value"));
    }
    if !quoted && raw.starts_with(['=', '!', '<', '>']) {
        return Err(bad("bad operator"));
    }
    if raw == "null" && !quoted {
        if !matches!(op, Op::Eq | Op::Ne) {
            return Err(bad("null only supports = and !="));
        }
        return Ok(Predicate { field, op, value: None });
    }
    let value = if field.numeric() {
        Value::Int(raw.parse().map_err(|_| bad("expected an unsigned integer"))?)
    } else if field == Field::Ip {
        Value::Ip(raw.parse().map_err(|_| bad("expected an IP address"))?)
    } else if field == Field::EventKind {
        let kind: TraceEventKind = raw.parse().map_err(|e: String| bad(&e))?;
        Value::Str(kind.as_str().to_string())
    } else if field == Field::Source {
        let src: TraceSource = raw.parse().map_err(|e: String| bad(&e))?;
        Value::Str(src.to_string())
    } else {
        Value::Str(raw.to_string())
    };
    Ok(Predicate { field, op, value: Some(value) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_terms() {
        let f: Filter = r#"geo="ZZ" ts_ms>=10 ts_ms<20 kind=CONNECTION asn!=null"#.parse().unwrap();
        assert_eq!(f.predicates.len(), 5);
        assert_eq!(f.ts_bounds(), (10, 19));
        assert_eq!(f.predicates[0].value, Some(Value::Str("ZZ".into())));
        assert_eq!(f.predicates[4].value, None);
        assert_eq!(f.to_string(), r#"geo="ZZ" ts_ms>=10 ts_ms<20 event_kind="CONNECTION" asn!=null"#);
        assert_eq!(f.to_string().parse::<Filter>().unwrap(), f);
        assert_eq!("".parse::<Filter>().unwrap(), Filter::all());
    }

    #[test]
    fn quoted_null_is_a_string() {
        let f: Filter = r#"rdns="null""#.parse().unwrap();
        assert_eq!(f.predicates[0].value, Some(Value::Str("null".into())));
        let f: Filter = r#"rdns="a b""#.parse().unwrap();
        assert_eq!(f.predicates[0].value, Some(Value::Str("a b".into())));
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["geo", "=ZZ", "colour=red", "ts_ms>=abc", "ip=300.1.1.1", "geo<null", "geo=\"ZZ", "kind=PING", "geo=", "ts_ms=>5"] {
            assert!(matches!(bad.parse::<Filter>(), Err(DciError::MalformedFilter(_))), "{bad}");
        }
    }

    #[test]
    fn lt_zero_is_empty_range() {
        let f: Filter = "ts_ms<0".parse().unwrap();
        let (lo, hi) = f.ts_bounds();
        assert!(lo > hi);
    }
}
