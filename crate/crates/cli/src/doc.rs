//! Line-oriented text documents: a 2-orbifold signature, a 3-orbifold
//! description, or a graph orbifold.
//!
//! ```text
//! # free comment lines
//! orbdoc 1 orb3
//! orb3 S3
//! edge e1 3 v1 v2
//! ...
//! ```
//!
//! The `orbdoc` header is optional on input; without it the kind is taken
//! from the first directive. Printing always writes the header, so files in
//! canonical form print back to themselves.

use std::fmt;
use std::str::FromStr;

use orbiflow_core::graphdec::{GraphError, GraphOrb};
use orbiflow_core::orb2::TwoOrbSig;
use orbiflow_core::orb3::{DiscSite, Edge, EdgeEnd, SiteLocus, ThreeOrbDesc, Underlying, Vertex};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// The text does not follow the format.
    Syntax,
    /// Well-formed text describing an invalid object.
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocError {
    pub kind: ErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for DocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}:{}: {}", self.line, self.column, self.message)
        }
    }
}

impl std::error::Error for DocError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Sig(TwoOrbSig),
    Orb3(ThreeOrbDesc),
    Graph(GraphOrb),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Sig(_) => "sig",
            Body::Orb3(_) => "orb3",
            Body::Graph(_) => "graph",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbDocument {
    pub version: u32,
    pub comments: Vec<String>,
    pub body: Body,
}

/// Text before a `#` that starts a word; `#` inside a token such as
/// `[A]#{S2}[B]` is kept.
fn strip_comment(raw: &str) -> &str {
    let mut prev = ' ';
    for (i, c) in raw.char_indices() {
        if c == '#' && prev.is_whitespace() {
            return raw[..i].trim();
        }
        prev = c;
    }
    raw.trim()
}

fn column_of(raw: &str, needle: &str) -> usize {
    raw.find(needle).map_or(1, |i| raw[..i].chars().count() + 1)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> DocError {
    DocError { kind: ErrorKind::Syntax, line, column, message: message.into() }
}

fn semantic(line: usize, column: usize, message: impl Into<String>) -> DocError {
    DocError { kind: ErrorKind::Semantic, line, column, message: message.into() }
}

pub fn parse(text: &str) -> Result<OrbDocument, DocError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut comments = Vec::new();
    let mut i = 0;
    while i < lines.len() && (lines[i].trim().is_empty() || lines[i].trim_start().starts_with('#')) {
        if lines[i].trim_start().starts_with('#') {
            comments.push(lines[i].to_string());
        }
        i += 1;
    }
    if i == lines.len() {
        return Err(syntax(lines.len().max(1), 1, "empty document"));
    }
    let mut version = VERSION;
    let mut kind: Option<&str> = None;
    let first: Vec<&str> = lines[i].split_whitespace().collect();
    if first[0] == "orbdoc" {
        let line = i + 1;
        if first.len() != 3 {
            return Err(syntax(line, 1, "expected `orbdoc <version> <sig|orb3|graph>`"));
        }
        version = first[1]
            .parse()
            .map_err(|_| syntax(line, column_of(lines[i], first[1]), format!("bad version `{}`", first[1])))?;
        if version != VERSION {
            return Err(syntax(line, column_of(lines[i], first[1]), format!("unsupported version {version}, this build reads {VERSION}")));
        }
        kind = Some(first[2]);
        i += 1;
    }
    let start = i;
    let kind = match kind {
        Some(k) => k,
        None => match lines[start].split_whitespace().next() {
            Some("orb3") => "orb3",
            Some("piece") | Some("bdry") | Some("glue") => "graph",
            _ => "sig",
        },
    };
    let body = match kind {
        "sig" => Body::Sig(parse_sig_body(&lines, start)?),
        "orb3" => Body::Orb3(parse_orb3(&lines, start)?),
        "graph" => Body::Graph(parse_graph(&lines, start)?),
        other => return Err(syntax(start, 1, format!("unknown document kind `{other}`"))),
    };
    Ok(OrbDocument { version, comments, body })
}

impl FromStr for OrbDocument {
    type Err = DocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

fn parse_sig_body(lines: &[&str], start: usize) -> Result<TwoOrbSig, DocError> {
    let mut found = None;
    for (n, raw) in lines.iter().enumerate().skip(start) {
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        if found.is_some() {
            return Err(syntax(n + 1, column_of(raw, body), "a signature document holds one signature"));
        }
        let sig = body.strip_prefix("sig ").unwrap_or(body).trim();
        found = Some(sig.parse::<TwoOrbSig>().map_err(|e| syntax(n + 1, column_of(raw, sig), e.to_string()))?);
    }
    found.ok_or_else(|| syntax(start + 1, 1, "missing signature"))
}

fn parse_graph(lines: &[&str], start: usize) -> Result<GraphOrb, DocError> {
    // Blank out the header so line numbers reported by the graph parser
    // match the file.
    let text: String = lines
        .iter()
        .enumerate()
        .map(|(n, l)| if n < start { "" } else { *l })
        .collect::<Vec<_>>()
        .join("\n");
    text.parse::<GraphOrb>().map_err(|e| match e {
        GraphError::Parse { line, reason } => {
            let raw = lines.get(line - 1).copied().unwrap_or("");
            syntax(line, column_of(raw, raw.trim()), reason)
        }
        other => semantic(0, 0, other.to_string()),
    })
}

/// Underlying tokens: a named token, `[A]#{sig}[B]` or `[A]#{sig}`.
pub fn parse_underlying(text: &str) -> Result<Underlying, String> {
    let s = text.trim();
    if !s.starts_with('[') {
        return Underlying::named(s).map_err(|e| e.to_string());
    }
    let close = matching(s, 0, '[', ']').ok_or("unbalanced `[`")?;
    let left = parse_underlying(&s[1..close])?;
    let rest = s[close + 1..].strip_prefix("#{").ok_or("expected `#{` after a bracketed token")?;
    let end = rest.find('}').ok_or("unterminated `{`")?;
    let along: TwoOrbSig = rest[..end].parse().map_err(|e: orbiflow_core::orb2::Orb2Error| e.to_string())?;
    let tail = &rest[end + 1..];
    if tail.is_empty() {
        return Ok(Underlying::SelfSum { base: Box::new(left), along });
    }
    if !tail.starts_with('[') || matching(tail, 0, '[', ']') != Some(tail.len() - 1) {
        return Err(format!("trailing text `{tail}`"));
    }
    let right = parse_underlying(&tail[1..tail.len() - 1])?;
    Ok(Underlying::Sum { left: Box::new(left), right: Box::new(right), along })
}

fn matching(s: &str, open_at: usize, open: char, close: char) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices().skip(open_at) {
        if c == open {
            depth += 1;
        } else if c == close {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn split_component<'a>(tok: &[&'a str]) -> Result<(Vec<&'a str>, usize), String> {
    match tok.last().and_then(|t| t.strip_prefix("component=")) {
        Some(k) => Ok((tok[..tok.len() - 1].to_vec(), k.parse().map_err(|_| format!("bad component `{k}`"))?)),
        None => Ok((tok.to_vec(), 0)),
    }
}

fn parse_end(t: &str) -> EdgeEnd {
    if t == "bdry" {
        EdgeEnd::Boundary
    } else {
        EdgeEnd::Vertex(t.to_string())
    }
}

fn parse_orb3(lines: &[&str], start: usize) -> Result<ThreeOrbDesc, DocError> {
    let mut desc: Option<ThreeOrbDesc> = None;
    for (n, raw) in lines.iter().enumerate().skip(start) {
        let line = n + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        let col = column_of(raw, body);
        let tok: Vec<&str> = body.split_whitespace().collect();
        if tok[0] == "orb3" {
            if desc.is_some() {
                return Err(syntax(line, col, "`orb3` appears twice"));
            }
            if tok.len() < 2 {
                return Err(syntax(line, col, "expected `orb3 <token>...`"));
            }
            let mut components = Vec::new();
            for t in &tok[1..] {
                components.push(parse_underlying(t).map_err(|e| syntax(line, column_of(raw, t), e))?);
            }
            let mut d = ThreeOrbDesc::new(components[0].clone());
            d.components = components;
            desc = Some(d);
            continue;
        }
        let d = desc.as_mut().ok_or_else(|| syntax(line, col, "description must start with `orb3 <token>`"))?;
        let (tok, component) = split_component(&tok).map_err(|e| syntax(line, col, e))?;
        let dup = |e: orbiflow_core::orb3::Orb3Error| semantic(line, col, e.to_string());
        match tok[0] {
            "edge" => {
                let usage = "expected `edge <id> <label> <end> <end>` or `edge <id> <label> circle`";
                if tok.len() < 4 {
                    return Err(syntax(line, col, usage));
                }
                let label: u32 = tok[2].parse().map_err(|_| syntax(line, column_of(raw, tok[2]), "bad edge label"))?;
                let ends = match &tok[3..] {
                    ["circle"] => None,
                    [a, b] => Some((parse_end(a), parse_end(b))),
                    _ => return Err(syntax(line, col, usage)),
                };
                d.add_edge(tok[1], Edge { label, ends, component }).map_err(dup)?;
            }
            "vertex" => {
                if tok.len() != 5 {
                    return Err(syntax(line, col, "expected `vertex <id> <edge> <edge> <edge>`"));
                }
                let edges = [tok[2].to_string(), tok[3].to_string(), tok[4].to_string()];
                d.add_vertex(tok[1], Vertex { edges, component }).map_err(dup)?;
            }
            "boundary" => {
                if tok.len() != 2 {
                    return Err(syntax(line, col, "expected `boundary <sig>`"));
                }
                let sig = tok[1].parse::<TwoOrbSig>().map_err(|e| syntax(line, column_of(raw, tok[1]), e.to_string()))?;
                d.boundary.push(sig);
            }
            "site" => {
                if tok.len() != 4 {
                    return Err(syntax(line, col, "expected `site <id> <sig> smooth|edge=<id>|vertex=<id>`"));
                }
                let sig = tok[2].parse::<TwoOrbSig>().map_err(|e| syntax(line, column_of(raw, tok[2]), e.to_string()))?;
                let locus = match tok[3].split_once('=') {
                    None if tok[3] == "smooth" => SiteLocus::Smooth,
                    Some(("edge", e)) => SiteLocus::Edge(e.to_string()),
                    Some(("vertex", v)) => SiteLocus::Vertex(v.to_string()),
                    _ => return Err(syntax(line, column_of(raw, tok[3]), "site locus must be smooth, edge=<id> or vertex=<id>")),
                };
                d.add_site(tok[1], DiscSite { sig, locus, component }).map_err(dup)?;
            }
            "note" => {
                let text = body.strip_prefix("note").unwrap_or("").trim();
                if !d.graph.embedding_note.is_empty() {
                    d.graph.embedding_note.push('\n');
                }
                d.graph.embedding_note.push_str(text);
            }
            other => return Err(syntax(line, col, format!("unknown directive `{other}`"))),
        }
    }
    let d = desc.ok_or_else(|| syntax(start + 1, 1, "missing `orb3 <token>` line"))?;
    d.validate().map_err(|e| semantic(0, 0, e.to_string()))?;
    Ok(d)
}

fn component_suffix(c: usize) -> String {
    if c == 0 {
        String::new()
    } else {
        format!(" component={c}")
    }
}

pub fn print_orb3(d: &ThreeOrbDesc) -> String {
    let mut out = String::new();
    let tokens: Vec<String> = d.components.iter().map(|c| c.to_string()).collect();
    out.push_str(&format!("orb3 {}\n", tokens.join(" ")));
    for b in &d.boundary {
        out.push_str(&format!("boundary {b}\n"));
    }
    for (id, e) in &d.graph.edges {
        let ends = match &e.ends {
            None => "circle".to_string(),
            Some((a, b)) => format!("{a} {b}"),
        };
        out.push_str(&format!("edge {id} {} {ends}{}\n", e.label, component_suffix(e.component)));
    }
    for (id, v) in &d.graph.vertices {
        out.push_str(&format!("vertex {id} {}{}\n", v.edges.join(" "), component_suffix(v.component)));
    }
    for (id, s) in &d.sites {
        let locus = match &s.locus {
            SiteLocus::Smooth => "smooth".to_string(),
            SiteLocus::Edge(e) => format!("edge={e}"),
            SiteLocus::Vertex(v) => format!("vertex={v}"),
        };
        out.push_str(&format!("site {id} {} {locus}{}\n", s.sig, component_suffix(s.component)));
    }
    for note in d.graph.embedding_note.lines() {
        out.push_str(&format!("note {note}\n"));
    }
    out
}

impl fmt::Display for OrbDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.comments {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "orbdoc {} {}", self.version, self.body.kind())?;
        match &self.body {
            Body::Sig(s) => writeln!(f, "{s}"),
            Body::Orb3(d) => f.write_str(&print_orb3(d)),
            Body::Graph(g) => write!(f, "{g}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_signature() {
        let d = parse("S2(2,3,5)").unwrap();
        assert_eq!(d.body, Body::Sig("S2(2,3,5)".parse().unwrap()));
        assert_eq!(d.to_string(), "orbdoc 1 sig\nS2(2,3,5)\n");
    }

    #[test]
    fn orb3_round_trip() {
        let text = "# theta graph\norbdoc 1 orb3\norb3 S3\nedge a 2 u v\nedge b 3 u v\nedge c 5 u v\nvertex u a b c\nvertex v a b c\nnote theta graph in a ball\n";
        let d = parse(text).unwrap();
        assert_eq!(d.to_string(), text);
        let sum = parse("orb3 [S3//Z5]#{S2(5,5)}[L(5,1)]  # trailing\n").unwrap();
        assert_eq!(sum.to_string(), "orbdoc 1 orb3\norb3 [S3//Z5]#{S2(5,5)}[L(5,1)]\n");
    }

    #[test]
    fn composite_tokens() {
        for t in ["S3", "[S3//Z5]#{S2(5,5)}[L(5,1)]", "[[S3]#{S2}[T3]]#{S2(2,2)}", "[S1xS2]#{S2}"] {
            assert_eq!(parse_underlying(t).unwrap().to_string(), t);
        }
        assert!(parse_underlying("[S3]#{S2}[T3").is_err());
        assert!(parse_underlying("Foo").is_err());
    }

    #[test]
    fn vertex_condition_is_semantic() {
        let e = parse("orb3 S3\nedge a 2 u v\nedge b 3 u v\nedge c 6 u v\nvertex u a b c\nvertex v a b c\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Semantic);
        assert!(e.message.contains("1/p + 1/q + 1/r > 1"), "{}", e.message);
    }

    #[test]
    fn syntax_errors_have_positions() {
        let e = parse("orb3 S3\nedge a two u v\n").unwrap_err();
        assert_eq!((e.kind, e.line, e.column), (ErrorKind::Syntax, 2, 8));
        let e = parse("orbdoc 1 graph\npiece A base D2\nbdry A.0 T2 slope 1-0\n").unwrap_err();
        assert_eq!((e.line, e.column), (3, 1));
        let e = parse("orbdoc 2 sig\nS2").unwrap_err();
        assert!(e.message.contains("version"));
    }

    #[test]
    fn isotopic_gluing_rejects_u() {
        let text = "piece P1 base A2\npiece P2 base A2\nbdry P1.0 T2 slope 1/0\nbdry P1.1 T2 slope 0/1\n\
                    bdry P2.0 T2 slope 0/1\nbdry P2.1 T2 slope 1/0\nglue P1.0 P2.1 isotopic=true u=3\n";
        let e = parse(text).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Semantic);
        assert!(e.message.contains("u is only allowed"));
    }
}
