//! Six-role causal DAGs: d-separation, the definitional constraints on the
//! latent roles, and classification into the three compatible families.
//!
//! A DAG is stored as a 36-bit adjacency mask (`from * 6 + to`), so whole
//! families of graphs can be generated and compared cheaply.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six roles of a causal structure. Declaration order is the canonical
/// ordering used for edge lists and enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Unobserved confounder of the spurious factor and the label.
    U,
    /// Spurious factor of variation.
    Z,
    /// Part of the features affected by `Z`.
    Xz,
    /// Part of the features not affected by `Z`.
    XzPerp,
    Y,
    /// Environment label.
    E,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::U, Role::Z, Role::Xz, Role::XzPerp, Role::Y, Role::E];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Role {
        Role::ALL[i]
    }

    /// Token used by the DAG text format.
    pub fn token(self) -> &'static str {
        match self {
            Role::U => "U",
            Role::Z => "Z",
            Role::Xz => "XZ",
            Role::XzPerp => "XZPERP",
            Role::Y => "Y",
            Role::E => "E",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Role> {
        match s.trim().to_ascii_uppercase().as_str() {
            "U" => Ok(Role::U),
            "Z" => Ok(Role::Z),
            "XZ" => Ok(Role::Xz),
            "XZPERP" => Ok(Role::XzPerp),
            "Y" => Ok(Role::Y),
            "E" => Ok(Role::E),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown role `{other}`"),
            }),
        }
    }
}

/// A set of roles, as a bitset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct RoleSet(u8);

impl RoleSet {
    pub const EMPTY: RoleSet = RoleSet(0);

    pub fn of(roles: &[Role]) -> RoleSet {
        roles.iter().fold(RoleSet::EMPTY, |s, &r| s.with(r))
    }

    pub fn with(self, r: Role) -> RoleSet {
        RoleSet(self.0 | (1 << r.index()))
    }

    pub fn contains(self, r: Role) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_disjoint(self, other: RoleSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn union(self, other: RoleSet) -> RoleSet {
        RoleSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Role> {
        Role::ALL.into_iter().filter(move |&r| self.contains(r))
    }
}

impl FromIterator<Role> for RoleSet {
    fn from_iter<I: IntoIterator<Item = Role>>(iter: I) -> Self {
        iter.into_iter().fold(RoleSet::EMPTY, |s, r| s.with(r))
    }
}

const fn bit(from: Role, to: Role) -> u64 {
    1u64 << (from as usize * 6 + to as usize)
}

/// Directed acyclic graph over the six roles.
///
/// Invariants: acyclic, no self-loops, `E` has no parents and its only
/// possible child is `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CausalDag {
    mask: u64,
}

impl CausalDag {
    pub fn new<I>(edges: I) -> Result<CausalDag>
    where
        I: IntoIterator<Item = (Role, Role)>,
    {
        let mask = edges.into_iter().fold(0u64, |m, (a, b)| m | bit(a, b));
        CausalDag::from_mask(mask)
    }

    pub fn from_mask(mask: u64) -> Result<CausalDag> {
        if mask >> 36 != 0 {
            return Err(Error::InvalidGraph("edge mask has bits beyond 36".into()));
        }
        for r in Role::ALL {
            if mask & bit(r, r) != 0 {
                return Err(Error::InvalidGraph(format!("self-loop on {r}")));
            }
        }
        for r in Role::ALL {
            if mask & bit(r, Role::E) != 0 {
                return Err(Error::InvalidGraph(format!("E has an incoming edge from {r}")));
            }
            if r != Role::U && mask & bit(Role::E, r) != 0 {
                return Err(Error::InvalidGraph(format!("E may only point to U, found E->{r}")));
            }
        }
        let dag = CausalDag { mask };
        if !dag.is_acyclic() {
            return Err(Error::InvalidGraph("graph contains a directed cycle".into()));
        }
        Ok(dag)
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn has_edge(&self, from: Role, to: Role) -> bool {
        self.mask & bit(from, to) != 0
    }

    /// Edges sorted by (from, to) in role order.
    pub fn edges(&self) -> Vec<(Role, Role)> {
        let mut out = Vec::new();
        for a in Role::ALL {
            for b in Role::ALL {
                if self.has_edge(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn parents(&self, r: Role) -> RoleSet {
        Role::ALL.into_iter().filter(|&p| self.has_edge(p, r)).collect()
    }

    pub fn children(&self, r: Role) -> RoleSet {
        Role::ALL.into_iter().filter(|&c| self.has_edge(r, c)).collect()
    }

    fn is_acyclic(&self) -> bool {
        // Kahn's algorithm on six nodes.
        let mut indegree = [0usize; 6];
        for (_, b) in self.edges() {
            indegree[b.index()] += 1;
        }
        let mut removed = [false; 6];
        for _ in 0..6 {
            let Some(next) = (0..6).find(|&i| !removed[i] && indegree[i] == 0) else {
                return false;
            };
            removed[next] = true;
            for c in self.children(Role::from_index(next)).iter() {
                indegree[c.index()] -= 1;
            }
        }
        true
    }

    /// Whether a directed path `from ⇝ to` exists whose intermediate nodes
    /// avoid `avoid`. A path of length zero does not count.
    pub fn has_directed_path(&self, from: Role, to: Role, avoid: RoleSet) -> bool {
        let mut seen = RoleSet::EMPTY;
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            for c in self.children(n).iter() {
                if c == to {
                    return true;
                }
                if !avoid.contains(c) && !seen.contains(c) {
                    seen = seen.with(c);
                    stack.push(c);
                }
            }
        }
        false
    }

    fn ancestors_of(&self, set: RoleSet) -> RoleSet {
        let mut anc = set;
        let mut stack: Vec<Role> = set.iter().collect();
        while let Some(n) = stack.pop() {
            for p in self.parents(n).iter() {
                if !anc.contains(p) {
                    anc = anc.with(p);
                    stack.push(p);
                }
            }
        }
        anc
    }

    /// Text form: one `FROM->TO` line per edge.
    pub fn to_text(&self) -> String {
        self.edges().iter().map(|(a, b)| format!("{a}->{b}\n")).collect()
    }

    /// Parses the text form. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<CausalDag> {
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, rhs) = line.split_once("->").ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `ROLE->ROLE`, found `{line}`"),
            })?;
            let with_line = |e: Error| match e {
                Error::Parse { message, .. } => Error::Parse { line: line_no, message },
                other => other,
            };
            let a: Role = lhs.parse().map_err(with_line)?;
            let b: Role = rhs.parse().map_err(with_line)?;
            edges.push((a, b));
        }
        CausalDag::new(edges)
    }

    /// Anti-causal example graph.
    pub fn example_anticausal() -> CausalDag {
        use Role::*;
        CausalDag::new([(Z, Xz), (U, Z), (U, Y), (Y, Xz), (Y, XzPerp), (XzPerp, Xz), (E, U)]).expect("static graph")
    }

    /// Confounded-outcome example.
    pub fn example_confoutcome() -> CausalDag {
        use Role::*;
        CausalDag::new([(Z, Xz), (U, Z), (U, Y), (Y, Xz), (XzPerp, Y), (XzPerp, Xz), (E, U)]).expect("static graph")
    }

    /// Confounded-descendant example.
    pub fn example_confdescendant() -> CausalDag {
        use Role::*;
        CausalDag::new([(Z, Xz), (XzPerp, Xz), (E, U), (Y, Z), (XzPerp, Y), (U, XzPerp), (U, Z)]).expect("static graph")
    }
}

impl fmt::Display for CausalDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges().iter().map(|(a, b)| format!("{a}->{b}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Decides `a ⟂ b | cond` by the reachability ("Bayes ball") algorithm.
pub fn d_separated(dag: &CausalDag, a: RoleSet, b: RoleSet, cond: RoleSet) -> Result<bool> {
    if !a.is_disjoint(b) || !a.is_disjoint(cond) || !b.is_disjoint(cond) {
        return Err(Error::InvalidQuery("query sets must be pairwise disjoint".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidQuery("query sets must be non-empty".into()));
    }
    let cond_anc = dag.ancestors_of(cond);

    // visited[node][dir]: dir 0 = arrived from a child (moving up),
    // dir 1 = arrived from a parent (moving down).
    let mut visited = [[false; 2]; 6];
    let mut stack: Vec<(Role, usize)> = a.iter().map(|r| (r, 0)).collect();
    while let Some((node, dir)) = stack.pop() {
        if visited[node.index()][dir] {
            continue;
        }
        visited[node.index()][dir] = true;
        let observed = cond.contains(node);
        if !observed && b.contains(node) {
            return Ok(false);
        }
        if dir == 0 && !observed {
            stack.extend(dag.parents(node).iter().map(|p| (p, 0)));
            stack.extend(dag.children(node).iter().map(|c| (c, 1)));
        } else if dir == 1 {
            if !observed {
                stack.extend(dag.children(node).iter().map(|c| (c, 1)));
            }
            if cond_anc.contains(node) {
                stack.extend(dag.parents(node).iter().map(|p| (p, 0)));
            }
        }
    }
    Ok(true)
}

/// The three families of compatible structures, plus the reject class.
/// Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CisaSubtype {
    AntiCausal,
    ConfOutcome,
    ConfDescendant,
    NotCisa,
}

impl CisaSubtype {
    pub fn label(self) -> &'static str {
        match self {
            CisaSubtype::AntiCausal => "anti-causal",
            CisaSubtype::ConfOutcome => "conf-outcome",
            CisaSubtype::ConfDescendant => "conf-descendant",
            CisaSubtype::NotCisa => "not-cisa",
        }
    }
}

impl fmt::Display for CisaSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Checks the definitional constraints on `Z`, `U`, `X_z^⊥` directly from
/// path and edge queries, without reference to the templates.
///
/// - `Z → X_z`, `Z` has no directed path to `Y`, no edge `Z → X_z^⊥`;
/// - `U` has no parents other than `E`, `E → U` is present, `U` reaches `Z`
///   by a path avoiding `Y` and reaches `Y` by a path avoiding `Z`, and the
///   edges `U → Y`, `U → X_z^⊥` are not both present;
/// - `X_z^⊥ → X_z` is present and `X_z → Y` is absent.
pub fn verify_cisa_constraints(dag: &CausalDag) -> bool {
    use Role::*;
    let spurious_ok = dag.has_edge(Z, Xz) && !dag.has_directed_path(Z, Y, RoleSet::EMPTY) && !dag.has_edge(Z, XzPerp);
    let confounder_ok = dag.has_edge(E, U)
        && dag.parents(U) == RoleSet::of(&[E])
        && dag.has_directed_path(U, Z, RoleSet::of(&[Y]))
        && dag.has_directed_path(U, Y, RoleSet::of(&[Z]))
        && !(dag.has_edge(U, Y) && dag.has_edge(U, XzPerp));
    let features_ok = dag.has_edge(XzPerp, Xz) && !dag.has_edge(Xz, Y);
    spurious_ok && confounder_ok && features_ok
}

struct Template {
    subtype: CisaSubtype,
    required: u64,
    optional: u64,
    /// Non-empty subset of these must be present (zero when unused).
    at_least_one: u64,
    /// The `X_z^⊥`–`Y` edge of this branch; when the graph has no edge
    /// between them it is matched as if this edge were present.
    branch: u64,
    branch_may_be_absent: bool,
}

impl Template {
    fn matches(&self, mask: u64) -> bool {
        let allowed = self.required | self.optional | self.at_least_one;
        mask & self.required == self.required
            && mask & !allowed == 0
            && (self.at_least_one == 0 || mask & self.at_least_one != 0)
    }
}

fn templates() -> [Template; 3] {
    use Role::*;
    let base = bit(Z, Xz) | bit(XzPerp, Xz) | bit(E, U);
    let free = bit(U, Xz) | bit(Y, Xz) | bit(Y, Z);
    [
        Template {
            subtype: CisaSubtype::AntiCausal,
            required: base | bit(Y, XzPerp) | bit(U, Y) | bit(U, Z),
            optional: free | bit(XzPerp, Z),
            at_least_one: 0,
            branch: bit(Y, XzPerp),
            branch_may_be_absent: true,
        },
        Template {
            subtype: CisaSubtype::ConfOutcome,
            required: base | bit(XzPerp, Y) | bit(U, Y) | bit(U, Z),
            optional: free | bit(XzPerp, Z),
            at_least_one: 0,
            branch: bit(XzPerp, Y),
            branch_may_be_absent: true,
        },
        Template {
            subtype: CisaSubtype::ConfDescendant,
            required: base | bit(XzPerp, Y) | bit(U, XzPerp),
            optional: free,
            at_least_one: bit(U, Z) | bit(XzPerp, Z),
            branch: bit(XzPerp, Y),
            branch_may_be_absent: false,
        },
    ]
}

/// Matches the graph against the three templates. A graph with no edge
/// between `X_z^⊥` and `Y` may match both the anti-causal and the
/// confounded-outcome template; the earlier subtype wins.
pub fn classify_cisa(dag: &CausalDag) -> CisaSubtype {
    use Role::*;
    let unlinked = !dag.has_edge(XzPerp, Y) && !dag.has_edge(Y, XzPerp);
    for t in templates() {
        let candidate = if unlinked && t.branch_may_be_absent {
            dag.mask | t.branch
        } else {
            dag.mask
        };
        if t.matches(candidate) {
            return t.subtype;
        }
    }
    CisaSubtype::NotCisa
}

fn submasks(set: u64) -> impl Iterator<Item = u64> {
    // All subsets of `set`, including 0 and `set` itself.
    let mut next = Some(0u64);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == set {
            None
        } else {
            Some((cur.wrapping_sub(set)) & set)
        };
        Some(cur)
    })
}

/// Every template-conforming DAG, generated from the templates, each with
/// its subtype. Sorted lexicographically by sorted edge list.
pub fn enumerate_cisa_dags() -> Vec<(CausalDag, CisaSubtype)> {
    let mut found: BTreeMap<Vec<(Role, Role)>, CausalDag> = BTreeMap::new();
    for t in templates() {
        for opt in submasks(t.optional) {
            for alo in submasks(t.at_least_one) {
                if t.at_least_one != 0 && alo == 0 {
                    continue;
                }
                let mask = t.required | opt | alo;
                let mut variants = vec![mask];
                if t.branch_may_be_absent {
                    variants.push(mask & !t.branch);
                }
                for m in variants {
                    let dag = CausalDag::from_mask(m).expect("templates are acyclic");
                    found.insert(dag.edges(), dag);
                }
            }
        }
    }
    found.into_values().map(|dag| (dag, classify_cisa(&dag))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Role::*;

    fn set(r: &[Role]) -> RoleSet {
        RoleSet::of(r)
    }

    #[test]
    fn chain_blocks_when_middle_observed() {
        let dag = CausalDag::new([(Z, Xz), (Xz, Y)]).unwrap();
        assert!(d_separated(&dag, set(&[Z]), set(&[Y]), set(&[Xz])).unwrap());
        assert!(!d_separated(&dag, set(&[Z]), set(&[Y]), RoleSet::EMPTY).unwrap());
    }

    #[test]
    fn collider_opens_when_observed() {
        let dag = CausalDag::new([(Y, Xz), (Z, Xz)]).unwrap();
        assert!(!d_separated(&dag, set(&[Y]), set(&[Z]), set(&[Xz])).unwrap());
        assert!(d_separated(&dag, set(&[Y]), set(&[Z]), RoleSet::EMPTY).unwrap());
    }

    #[test]
    fn anticausal_example_invariance() {
        let dag = CausalDag::example_anticausal();
        assert!(d_separated(&dag, set(&[XzPerp]), set(&[E]), set(&[Y])).unwrap());
        assert!(!d_separated(&dag, set(&[XzPerp]), set(&[E]), RoleSet::EMPTY).unwrap());
    }

    #[test]
    fn overlapping_query_is_rejected() {
        let dag = CausalDag::example_anticausal();
        let err = d_separated(&dag, set(&[Y]), set(&[Y, E]), RoleSet::EMPTY).unwrap_err();
        assert!(matches!(err, Error::InvalidQuery(_)));
        let err = d_separated(&dag, set(&[Y]), set(&[E]), set(&[E])).unwrap_err();
        assert!(matches!(err, Error::InvalidQuery(_)));
    }

    #[test]
    fn constraint_examples() {
        assert!(verify_cisa_constraints(&CausalDag::example_anticausal()));
        let mut edges = CausalDag::example_anticausal().edges();
        edges.push((Z, Y));
        assert!(!verify_cisa_constraints(&CausalDag::new(edges).unwrap()));

        let both = CausalDag::new([(Z, Xz), (XzPerp, Xz), (E, U), (U, Z), (U, Y), (U, XzPerp), (XzPerp, Y)]).unwrap();
        assert!(!verify_cisa_constraints(&both));
        assert_eq!(classify_cisa(&both), CisaSubtype::NotCisa);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_cisa(&CausalDag::example_anticausal()), CisaSubtype::AntiCausal);
        assert_eq!(
            classify_cisa(&CausalDag::example_confoutcome()),
            CisaSubtype::ConfOutcome
        );
        assert_eq!(
            classify_cisa(&CausalDag::example_confdescendant()),
            CisaSubtype::ConfDescendant
        );
        let bare = CausalDag::new([(Z, Xz), (XzPerp, Xz), (E, U)]).unwrap();
        assert_eq!(classify_cisa(&bare), CisaSubtype::NotCisa);
    }

    #[test]
    fn unlinked_feature_resolves_to_anticausal() {
        let dag = CausalDag::new([(Z, Xz), (XzPerp, Xz), (E, U), (U, Y), (U, Z)]).unwrap();
        assert_eq!(classify_cisa(&dag), CisaSubtype::AntiCausal);
        // Without the X_z^⊥ -> Y edge, U -> X_z^⊥ gives U no route to Y.
        let dag = CausalDag::new([(Z, Xz), (XzPerp, Xz), (E, U), (U, XzPerp), (U, Z)]).unwrap();
        assert_eq!(classify_cisa(&dag), CisaSubtype::NotCisa);
    }

    #[test]
    fn invalid_graphs() {
        assert!(CausalDag::new([(Y, Z), (Z, Y)]).is_err());
        assert!(CausalDag::new([(U, E)]).is_err());
        assert!(CausalDag::new([(E, Y)]).is_err());
        assert!(CausalDag::new([(Y, Y)]).is_err());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let dag = CausalDag::example_confdescendant();
        assert_eq!(CausalDag::parse(&dag.to_text()).unwrap(), dag);

        let text = "# anti-causal\nZ->XZ\n\nU -> Z  # confounder\nU->Y\nY->XZ\nY->XZPERP\nXZPERP->XZ\nE->U\n";
        assert_eq!(CausalDag::parse(text).unwrap(), CausalDag::example_anticausal());

        match CausalDag::parse("Z->XZ\nU=>Z\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match CausalDag::parse("Z->XZ\n\nU->W\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn enumeration_is_sorted_and_unique() {
        let all = enumerate_cisa_dags();
        let keys: Vec<_> = all.iter().map(|(d, _)| d.edges()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(keys, sorted);
        assert!(all
            .iter()
            .all(|(d, s)| *s != CisaSubtype::NotCisa && verify_cisa_constraints(d)));
    }

    #[test]
    fn submask_iteration_counts() {
        assert_eq!(submasks(0).count(), 1);
        assert_eq!(submasks(0b1011).count(), 8);
    }
}
