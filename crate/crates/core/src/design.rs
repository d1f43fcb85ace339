//! Measurement-design parsing and variance-component enumeration.
//!
//! A design string names the facets of a measurement and how they are
//! arranged: `x` crosses two terms, `:` nests the left side within
//! everything to its right, and parentheses group. `person x (rater:item)`
//! crosses persons with raters nested in items. Mixing `x` and `:` at one
//! grouping level is rejected rather than guessed at, because the two
//! readings describe different studies.

use std::fmt;

use thiserror::Error;

/// Ways a design string can fail to parse or validate.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesignError {
    /// `x` and `:` meet at the same grouping level, e.g. `a x b:c`.
    #[error("`x` and `:` mix at the same grouping level; parenthesize the nested term, e.g. `a x (b:c)`")]
    MixedOperatorAmbiguity,
    /// The same facet name (case-insensitive) appears twice.
    #[error("facet `{0}` appears more than once")]
    DuplicateFacet(String),
    /// An operator has no facet to act on, e.g. `a x` or `a::b`.
    #[error("expected a facet name at byte {0}")]
    EmptyToken(usize),
    /// Parentheses do not balance.
    #[error("unbalanced parentheses")]
    UnbalancedParens,
    /// A token that no rule allows at this point, e.g. `(a x b):c`.
    #[error("unexpected `{found}` at byte {pos}")]
    UnexpectedToken { found: String, pos: usize },
    /// Reliability needs an object of measurement plus at least one facet.
    #[error("a design needs at least two facets, found {0}")]
    TooFewFacets(usize),
}

/// One facet of a design, with the facets it is nested within.
#[derive(Debug, Clone)]
pub struct Facet {
    /// Name as spelled in the design string.
    pub name: String,
    /// Positions of every facet this one is nested within, transitively.
    pub nested_in: Vec<usize>,
}

/// A parsed design: facets in appearance order plus their nesting relations.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    facets: Vec<Facet>,
    source: String,
}

impl PartialEq for DesignSpec {
    fn eq(&self, other: &Self) -> bool {
        self.facets.len() == other.facets.len()
            && self
                .facets
                .iter()
                .zip(&other.facets)
                .all(|(a, b)| a.name.eq_ignore_ascii_case(&b.name) && a.nested_in == b.nested_in)
    }
}

impl Eq for DesignSpec {}

impl DesignSpec {
    /// Facets in the order they appear in the design string.
    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Number of facets.
    pub fn len(&self) -> usize {
        self.facets.len()
    }

    /// True when the design has no facets; never holds for a parsed design.
    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    /// Position of the facet with this name, matched case-insensitively.
    pub fn facet_index(&self, name: &str) -> Option<usize> {
        self.facets
            .iter()
            .position(|f| f.name.eq_ignore_ascii_case(name))
    }

    /// The source string this design was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Facet positions this facet is nested within, transitively closed.
    pub fn nesting_closure(&self, facet: usize) -> &[usize] {
        &self.facets[facet].nested_in
    }

    /// True when the facet is not nested within anything.
    pub fn is_top_level(&self, facet: usize) -> bool {
        self.facets[facet].nested_in.is_empty()
    }

    /// Canonical rendering; parsing it back yields an equal spec.
    pub fn canonical(&self) -> String {
        let all: Vec<usize> = (0..self.facets.len()).collect();
        self.render_set(&all)
    }

    /// Renders a closed facet set as a design substring.
    ///
    /// The set must contain the nesting parents of each member.
    pub(crate) fn render_set(&self, set: &[usize]) -> String {
        let comps = self.connected_components(set);
        let parts: Vec<String> = comps
            .iter()
            .map(|c| {
                let term = self.render_term(c);
                if comps.len() > 1 && c.len() > 1 {
                    format!("({term})")
                } else {
                    term
                }
            })
            .collect();
        parts.join(" x ")
    }

    fn render_term(&self, comp: &[usize]) -> String {
        if comp.len() == 1 {
            return self.facets[comp[0]].name.clone();
        }
        // The head is the member nested within every other member.
        let head = *comp
            .iter()
            .find(|&&f| {
                let rest: Vec<usize> = comp.iter().copied().filter(|&g| g != f).collect();
                let mut nested = self.facets[f].nested_in.clone();
                nested.sort_unstable();
                nested == rest
            })
            .expect("a connected nested term has a unique innermost facet");
        let tail: Vec<usize> = comp.iter().copied().filter(|&g| g != head).collect();
        let tail_comps = self.connected_components(&tail);
        if tail_comps.len() == 1 {
            format!("{}:{}", self.facets[head].name, self.render_term(&tail))
        } else {
            format!("{}:({})", self.facets[head].name, self.render_set(&tail))
        }
    }

    /// Splits a facet set into groups connected by nesting, in design order.
    fn connected_components(&self, set: &[usize]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = set.to_vec();
        remaining.sort_unstable();
        let mut comps = Vec::new();
        while let Some(&seed) = remaining.first() {
            let mut comp = vec![seed];
            let mut frontier = vec![seed];
            remaining.retain(|&f| f != seed);
            while let Some(f) = frontier.pop() {
                let linked: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&g| {
                        self.facets[f].nested_in.contains(&g)
                            || self.facets[g].nested_in.contains(&f)
                    })
                    .collect();
                for g in linked {
                    remaining.retain(|&h| h != g);
                    comp.push(g);
                    frontier.push(g);
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String, usize),
    Cross(usize),
    Colon(usize),
    Open(usize),
    Close(usize),
}

impl Tok {
    fn pos(&self) -> usize {
        match self {
            Tok::Ident(_, p) | Tok::Cross(p) | Tok::Colon(p) | Tok::Open(p) | Tok::Close(p) => *p,
        }
    }

    fn describe(&self) -> String {
        match self {
            Tok::Ident(s, _) => s.clone(),
            Tok::Cross(_) => "x".into(),
            Tok::Colon(_) => ":".into(),
            Tok::Open(_) => "(".into(),
            Tok::Close(_) => ")".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<Tok>, DesignError> {
    let mut toks = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(pos, ch)) = chars.peek() {
        if ch.is_whitespace() {
            chars.next();
        } else if ch == '(' {
            chars.next();
            toks.push(Tok::Open(pos));
        } else if ch == ')' {
            chars.next();
            toks.push(Tok::Close(pos));
        } else if ch == ':' {
            chars.next();
            toks.push(Tok::Colon(pos));
        } else if ch.is_alphanumeric() || ch == '_' {
            let mut name = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_alphanumeric() || c == '_' {
                    name.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            if name.eq_ignore_ascii_case("x") {
                toks.push(Tok::Cross(pos));
            } else {
                toks.push(Tok::Ident(name, pos));
            }
        } else {
            return Err(DesignError::UnexpectedToken {
                found: ch.to_string(),
                pos,
            });
        }
    }
    Ok(toks)
}

// Parse tree before facet positions are assigned.
enum Node {
    Leaf(String),
    Nest(String, Box<Node>),
    Group(Vec<Node>),
}

struct Parser {
    toks: Vec<Tok>,
    at: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at)
    }

    fn next_pos(&self) -> usize {
        self.peek().map_or(self.src_len, Tok::pos)
    }

    // design := term ("x" term)*
    fn design(&mut self) -> Result<Node, DesignError> {
        let mut terms = Vec::new();
        let mut any_bare_nest = false;
        loop {
            let (node, bare_nest) = self.term()?;
            any_bare_nest |= bare_nest;
            terms.push(node);
            match self.peek() {
                Some(Tok::Cross(_)) => {
                    self.at += 1;
                }
                _ => break,
            }
        }
        if terms.len() > 1 && any_bare_nest {
            return Err(DesignError::MixedOperatorAmbiguity);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Node::Group(terms)
        })
    }

    // term := ident | ident ":" term | "(" design ")"
    // The bool reports an unparenthesized `:` at the top of this term.
    fn term(&mut self) -> Result<(Node, bool), DesignError> {
        match self.peek().cloned() {
            Some(Tok::Ident(name, _)) => {
                self.at += 1;
                if let Some(Tok::Colon(_)) = self.peek() {
                    self.at += 1;
                    let (tail, _) = self.term()?;
                    Ok((Node::Nest(name, Box::new(tail)), true))
                } else {
                    Ok((Node::Leaf(name), false))
                }
            }
            Some(Tok::Open(_)) => {
                self.at += 1;
                let inner = self.design()?;
                match self.peek() {
                    Some(Tok::Close(_)) => {
                        self.at += 1;
                        Ok((inner, false))
                    }
                    _ => Err(DesignError::UnbalancedParens),
                }
            }
            _ => Err(DesignError::EmptyToken(self.next_pos())),
        }
    }
}

/// Parses a design string into a [`DesignSpec`].
///
/// ```
/// use gtheory::design::parse_design;
///
/// let spec = parse_design("person x (rater:item)").unwrap();
/// assert_eq!(spec.canonical(), "person x (rater:item)");
/// assert_eq!(spec.nesting_closure(1), &[2]);
/// ```
pub fn parse_design(src: &str) -> Result<DesignSpec, DesignError> {
    let toks = lex(src)?;
    let mut parser = Parser {
        toks,
        at: 0,
        src_len: src.len(),
    };
    let root = parser.design()?;
    if let Some(tok) = parser.peek() {
        return Err(match tok {
            Tok::Close(_) => DesignError::UnbalancedParens,
            other => DesignError::UnexpectedToken {
                found: other.describe(),
                pos: other.pos(),
            },
        });
    }

    let mut facets = Vec::new();
    collect(&root, &mut facets);
    for (i, f) in facets.iter().enumerate() {
        if facets[..i]
            .iter()
            .any(|g| g.name.eq_ignore_ascii_case(&f.name))
        {
            return Err(DesignError::DuplicateFacet(f.name.clone()));
        }
    }
    if facets.len() < 2 {
        return Err(DesignError::TooFewFacets(facets.len()));
    }
    Ok(DesignSpec {
        facets,
        source: src.to_string(),
    })
}

// Appends facets in appearance order. A nest head lists every facet of its
// tail, so `nested_in` comes out transitively closed by construction.
fn collect(node: &Node, out: &mut Vec<Facet>) {
    match node {
        Node::Leaf(name) => out.push(Facet {
            name: name.clone(),
            nested_in: Vec::new(),
        }),
        Node::Group(terms) => {
            for t in terms {
                collect(t, out);
            }
        }
        Node::Nest(name, tail) => {
            let head = out.len();
            out.push(Facet {
                name: name.clone(),
                nested_in: Vec::new(),
            });
            collect(tail, out);
            out[head].nested_in = (head + 1..out.len()).collect();
        }
    }
}

/// One source of score variance: a set of primary facets plus the facets
/// they are nested within.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VarianceComponent {
    primary: Vec<usize>,
    nesting: Vec<usize>,
}

impl VarianceComponent {
    /// Builds a component from sorted, disjoint facet position sets.
    pub fn new(primary: Vec<usize>, nesting: Vec<usize>) -> Self {
        debug_assert!(primary.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(nesting.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(primary.iter().all(|p| !nesting.contains(p)));
        VarianceComponent { primary, nesting }
    }

    /// Facets this component varies over, beyond its nesting context.
    pub fn primary(&self) -> &[usize] {
        &self.primary
    }

    /// Nesting context: parents of the primary facets.
    pub fn nesting(&self) -> &[usize] {
        &self.nesting
    }

    /// All facet positions involved, sorted ascending.
    pub fn total(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.primary.iter().chain(&self.nesting).copied().collect();
        all.sort_unstable();
        all
    }

    /// Number of facets involved.
    pub fn order(&self) -> usize {
        self.primary.len() + self.nesting.len()
    }

    /// True when every facet of `other` is involved in `self`.
    pub fn contains(&self, other: &VarianceComponent) -> bool {
        let mine = self.total();
        other.total().iter().all(|f| mine.binary_search(f).is_ok())
    }

    /// True when the facet position is involved in this component.
    pub fn involves(&self, facet: usize) -> bool {
        self.primary.contains(&facet) || self.nesting.contains(&facet)
    }

    /// Human-readable label, e.g. `p x (r:i)`.
    pub fn label(&self, design: &DesignSpec) -> String {
        design.render_set(&self.total())
    }
}

/// Enumerates the variance components a design admits.
///
/// A facet set is admissible when it contains the nesting parents of each
/// member. Components are ordered by facet count, then by number of primary
/// facets, then by design position.
pub fn enumerate_components(design: &DesignSpec) -> Vec<VarianceComponent> {
    let k = design.facets().len();
    debug_assert!(k < usize::BITS as usize);
    let mut comps = Vec::new();
    for mask in 1u64..(1u64 << k) {
        let set: Vec<usize> = (0..k).filter(|&f| mask >> f & 1 == 1).collect();
        let closed = set
            .iter()
            .all(|&f| design.nesting_closure(f).iter().all(|p| set.contains(p)));
        if !closed {
            continue;
        }
        let primary: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&f| !set.iter().any(|&g| design.nesting_closure(g).contains(&f)))
            .collect();
        let nesting: Vec<usize> = set
            .iter()
            .copied()
            .filter(|f| !primary.contains(f))
            .collect();
        comps.push(VarianceComponent::new(primary, nesting));
    }
    comps.sort_by(|a, b| {
        (a.order(), a.primary.len(), a.total()).cmp(&(b.order(), b.primary.len(), b.total()))
    });
    comps
}

/// All admissible subsets of a closed facet set, including the empty set.
pub(crate) fn closed_subsets(design: &DesignSpec, set: &[usize]) -> Vec<Vec<usize>> {
    let n = set.len();
    let mut subs = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let sub: Vec<usize> = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| set[i])
            .collect();
        let closed = sub
            .iter()
            .all(|&f| design.nesting_closure(f).iter().all(|p| sub.contains(p)));
        if closed {
            subs.push(sub);
        }
    }
    subs
}
