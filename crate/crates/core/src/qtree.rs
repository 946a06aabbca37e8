//! The 39-node hierarchical subquery tree: data model, indented-listing
//! parser and renderer, JSON form, and node adjacency.
//!
//! A tree decomposes one base query into subqueries at three levels of
//! specificity, with exactly three children everywhere: 3 + 9 + 27 = 39
//! nodes. Because both depth and fanout are fixed, every structurally valid
//! tree has the *same* set of node paths; what varies is the text attached
//! to each path.
//!
//! The listing format is an indented numbered list, four spaces per level:
//!
//! ```text
//! 1. What is the plot of The Woman Hunt?
//!     1.1. What are the main events in The Woman Hunt?
//!         1.1.1. What initiates the conflict in The Woman Hunt?
//! ```

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::text::normalize_ws;

/// Tree depth (and fanout) - three levels, three children each.
pub const MAX_DEPTH: usize = 3;
/// Children per internal node (and roots under the implicit base query).
pub const FANOUT: u8 = 3;
/// Total nodes in a valid tree: 3 + 9 + 27.
pub const NODE_COUNT: usize = 39;

/// Position of a node in the tree: 1 to 3 indices, each in 1..=3.
///
/// Ordering is lexicographic over the index sequence, which is exactly
/// depth-first preorder of the printed listing ("1" < "1.1" < "1.1.1" <
/// "1.1.2" < "1.2" < "2").
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreePath {
    len: u8,
    idx: [u8; MAX_DEPTH],
}

/// A path that does not fit the 3x3x3 shape.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("path must have 1 to 3 segments, got {0}")]
    BadDepth(usize),
    #[error("path segment must be 1, 2, or 3, got {0}")]
    BadSegment(u32),
    #[error("cannot parse `{0}` as a tree path")]
    Unparseable(String),
}

impl TreePath {
    pub fn new(indices: &[u8]) -> Result<Self, PathError> {
        if indices.is_empty() || indices.len() > MAX_DEPTH {
            return Err(PathError::BadDepth(indices.len()));
        }
        let mut idx = [0u8; MAX_DEPTH];
        for (i, &k) in indices.iter().enumerate() {
            if k == 0 || k > FANOUT {
                return Err(PathError::BadSegment(u32::from(k)));
            }
            idx[i] = k;
        }
        Ok(Self {
            len: indices.len() as u8,
            idx,
        })
    }

    /// Depth of the node, 1 to 3.
    pub fn depth(&self) -> usize {
        self.len as usize
    }

    pub fn indices(&self) -> &[u8] {
        &self.idx[..self.len as usize]
    }

    pub fn parent(&self) -> Option<TreePath> {
        (self.len > 1).then(|| Self {
            len: self.len - 1,
            idx: {
                let mut idx = self.idx;
                idx[self.len as usize - 1] = 0;
                idx
            },
        })
    }

    /// The k-th child path, if this node is not at maximum depth.
    pub fn child(&self, k: u8) -> Option<TreePath> {
        if self.depth() == MAX_DEPTH || k == 0 || k > FANOUT {
            return None;
        }
        let mut idx = self.idx;
        idx[self.len as usize] = k;
        Some(Self {
            len: self.len + 1,
            idx,
        })
    }

    /// Same-parent siblings (two of them; depth-1 nodes are siblings of each
    /// other under the implicit base-query root).
    pub fn siblings(&self) -> impl Iterator<Item = TreePath> + '_ {
        let own = self.idx[self.len as usize - 1];
        (1..=FANOUT).filter(move |&k| k != own).map(move |k| {
            let mut idx = self.idx;
            idx[self.len as usize - 1] = k;
            Self { len: self.len, idx }
        })
    }

    /// All 39 paths of the fixed topology in canonical (preorder) order.
    pub fn all() -> Vec<TreePath> {
        let mut out = Vec::with_capacity(NODE_COUNT);
        for a in 1..=FANOUT {
            out.push(TreePath::new(&[a]).unwrap());
            for b in 1..=FANOUT {
                out.push(TreePath::new(&[a, b]).unwrap());
                for c in 1..=FANOUT {
                    out.push(TreePath::new(&[a, b, c]).unwrap());
                }
            }
        }
        out
    }
}

impl Ord for TreePath {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.indices().cmp(other.indices())
    }
}

impl PartialOrd for TreePath {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for k in self.indices() {
            if !first {
                write!(f, ".")?;
            }
            write!(f, "{k}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TreePath({self})")
    }
}

impl FromStr for TreePath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, PathError> {
        let mut indices = Vec::new();
        for seg in s.trim().trim_end_matches('.').split('.') {
            let k: u32 = seg
                .parse()
                .map_err(|_| PathError::Unparseable(s.to_string()))?;
            if k == 0 || k > u32::from(FANOUT) {
                return Err(PathError::BadSegment(k));
            }
            indices.push(k as u8);
        }
        TreePath::new(&indices)
    }
}

impl Serialize for TreePath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TreePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(D::Error::custom)
    }
}

/// One node of the tree: its path and its subquery text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNode {
    pub path: TreePath,
    pub text: String,
}

/// Structural errors raised when parsing or assembling a tree.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    /// The line carries no `N.` / `N.M.` / `N.M.K.` prefix, or its
    /// indentation does not match its numbering.
    #[error("line {line}: malformed tree line: `{content}`")]
    MalformedLine { line: usize, content: String },
    /// A node appeared before its parent (e.g. "1.2" with no "1").
    #[error("line {line}: node {path} appears before its parent")]
    PathGap { line: usize, path: TreePath },
    /// The same path was listed twice.
    #[error("line {line}: duplicate node {path}")]
    DuplicatePath { line: usize, path: TreePath },
    /// An internal level does not have exactly three children.
    /// `parent` is the canonical path string, or "root" for the top level.
    #[error("{parent} has {got} children, expected 3")]
    WrongFanout { parent: String, got: usize },
    /// Two nodes carry the same text (case-insensitive, whitespace-collapsed).
    #[error("nodes {first} and {second} have the same text")]
    DuplicateText { first: TreePath, second: TreePath },
    /// A node has no text after trimming.
    #[error("node {path} has empty text")]
    EmptyText { path: TreePath },
    /// Node text spans multiple lines (only possible via the constructor).
    #[error("node {path} text contains a newline")]
    MultilineText { path: TreePath },
    /// The base query is empty.
    #[error("base query is empty")]
    EmptyBaseQuery,
}

/// A validated 39-node subquery tree for one base query.
///
/// Immutable after construction; nodes iterate in canonical preorder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTree {
    base_query: String,
    nodes: BTreeMap<TreePath, String>,
}

impl QTree {
    /// Assembles a tree from parts, enforcing every invariant: complete
    /// 3/9/27 topology, non-empty single-line texts, and pairwise-distinct
    /// texts under case-insensitive whitespace-collapsed comparison.
    pub fn new(
        base_query: impl Into<String>,
        nodes: impl IntoIterator<Item = QNode>,
    ) -> Result<Self, ParseError> {
        let base_query = base_query.into();
        if base_query.trim().is_empty() {
            return Err(ParseError::EmptyBaseQuery);
        }
        let mut map = BTreeMap::new();
        for (i, node) in nodes.into_iter().enumerate() {
            let text = node.text.trim().to_string();
            if text.is_empty() {
                return Err(ParseError::EmptyText { path: node.path });
            }
            if text.contains('\n') || text.contains('\r') {
                return Err(ParseError::MultilineText { path: node.path });
            }
            if map.insert(node.path, text).is_some() {
                return Err(ParseError::DuplicatePath {
                    line: i + 1,
                    path: node.path,
                });
            }
        }
        Self::check_fanout(&map)?;
        Self::check_distinct_texts(&map)?;
        Ok(Self {
            base_query,
            nodes: map,
        })
    }

    /// Builds a complete tree by calling `text_for` on each of the 39 paths.
    pub fn build_with(
        base_query: impl Into<String>,
        mut text_for: impl FnMut(TreePath) -> String,
    ) -> Result<Self, ParseError> {
        Self::new(
            base_query,
            TreePath::all().into_iter().map(|path| QNode {
                path,
                text: text_for(path),
            }),
        )
    }

    fn check_fanout(map: &BTreeMap<TreePath, String>) -> Result<(), ParseError> {
        let roots = map.keys().filter(|p| p.depth() == 1).count();
        if roots != FANOUT as usize {
            return Err(ParseError::WrongFanout {
                parent: "root".to_string(),
                got: roots,
            });
        }
        for parent in map.keys().filter(|p| p.depth() < MAX_DEPTH) {
            let got = (1..=FANOUT)
                .filter(|&k| map.contains_key(&parent.child(k).unwrap()))
                .count();
            if got != FANOUT as usize {
                return Err(ParseError::WrongFanout {
                    parent: parent.to_string(),
                    got,
                });
            }
        }
        Ok(())
    }

    fn check_distinct_texts(map: &BTreeMap<TreePath, String>) -> Result<(), ParseError> {
        let mut seen: BTreeMap<String, TreePath> = BTreeMap::new();
        for (&path, text) in map {
            if let Some(&first) = seen.get(&normalize_ws(text)) {
                return Err(ParseError::DuplicateText {
                    first,
                    second: path,
                });
            }
            seen.insert(normalize_ws(text), path);
        }
        Ok(())
    }

    pub fn base_query(&self) -> &str {
        &self.base_query
    }

    /// Text of the node at `path`. Always present in a valid tree.
    pub fn text(&self, path: TreePath) -> &str {
        &self.nodes[&path]
    }

    /// Nodes in canonical preorder.
    pub fn nodes(&self) -> impl Iterator<Item = (TreePath, &str)> {
        self.nodes.iter().map(|(&p, t)| (p, t.as_str()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adjacent nodes: the parent (if any), all children (if any), and the
    /// same-parent siblings. Depth-1 nodes are mutual siblings under the
    /// implicit base-query root. Cousins are not adjacent.
    pub fn neighbors(&self, path: TreePath) -> BTreeSet<TreePath> {
        let mut out = BTreeSet::new();
        if let Some(parent) = path.parent() {
            out.insert(parent);
        }
        for k in 1..=FANOUT {
            if let Some(child) = path.child(k) {
                out.insert(child);
            }
        }
        out.extend(path.siblings());
        out
    }
}

/// Parses the lines of an indented numbered listing into `(line, path, text)`
/// triples without structural validation. Blank lines and trailing
/// whitespace are tolerated; indentation must be an exact multiple of four
/// spaces and agree with the printed numbering.
pub fn parse_listing_lines(raw_text: &str) -> Result<Vec<(usize, TreePath, String)>, ParseError> {
    let mut out = Vec::new();
    for (lineno, raw_line) in raw_text.lines().enumerate() {
        let line = lineno + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let indent = raw_line.len() - raw_line.trim_start_matches(' ').len();
        let malformed = || ParseError::MalformedLine {
            line,
            content: raw_line.trim_end().to_string(),
        };
        let rest = &raw_line[indent..];
        if rest.starts_with(char::is_whitespace) {
            // tabs or other whitespace in the indentation
            return Err(malformed());
        }
        if indent % 4 != 0 || indent / 4 >= MAX_DEPTH {
            return Err(malformed());
        }
        let expected_depth = indent / 4 + 1;

        // Prefix grammar: one "N." group per depth level, then a space.
        let mut segments: Vec<u32> = Vec::new();
        let mut pos = 0;
        let bytes = rest.as_bytes();
        loop {
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos == start || pos >= bytes.len() || bytes[pos] != b'.' {
                return Err(malformed());
            }
            segments.push(rest[start..pos].parse().map_err(|_| malformed())?);
            pos += 1; // consume '.'
            if pos < bytes.len() && bytes[pos].is_ascii_digit() {
                continue;
            }
            break;
        }
        if segments.len() != expected_depth || segments.contains(&0) {
            return Err(malformed());
        }
        if let Some(wide) = segments.iter().position(|&n| n > u32::from(FANOUT)) {
            // a fourth (or later) sibling at this level
            let parent = if wide == 0 {
                "root".to_string()
            } else {
                let above: Vec<u8> = segments[..wide].iter().map(|&n| n as u8).collect();
                TreePath::new(&above)
                    .expect("prefix above the wide segment is valid")
                    .to_string()
            };
            return Err(ParseError::WrongFanout {
                parent,
                got: segments[wide] as usize,
            });
        }
        let indices: Vec<u8> = segments.iter().map(|&n| n as u8).collect();
        let path = TreePath::new(&indices).map_err(|_| malformed())?;
        let text = rest[pos..].trim();
        if text.is_empty() {
            return Err(malformed());
        }
        out.push((line, path, text.to_string()));
    }
    Ok(out)
}

/// Parses the indented numbered listing into a tree, attaching the caller's
/// base query.
pub fn parse_tree(base_query: impl Into<String>, raw_text: &str) -> Result<QTree, ParseError> {
    let mut nodes: Vec<QNode> = Vec::with_capacity(NODE_COUNT);
    let mut seen: BTreeSet<TreePath> = BTreeSet::new();
    for (line, path, text) in parse_listing_lines(raw_text)? {
        if let Some(parent) = path.parent() {
            if !seen.contains(&parent) {
                return Err(ParseError::PathGap { line, path });
            }
        }
        if !seen.insert(path) {
            return Err(ParseError::DuplicatePath { line, path });
        }
        nodes.push(QNode { path, text });
    }
    QTree::new(base_query, nodes)
}

/// Renders the tree back into the listing format, four spaces of indentation
/// per depth level, with a trailing newline. `parse_tree` of the output
/// yields an identical tree.
pub fn render_tree(tree: &QTree) -> String {
    let mut out = String::new();
    for (path, text) in tree.nodes() {
        for _ in 1..path.depth() {
            out.push_str("    ");
        }
        out.push_str(&path.to_string());
        out.push_str(". ");
        out.push_str(text);
        out.push('\n');
    }
    out
}

/// Whitespace normalization used for round-trip comparison of listings:
/// strips per-line trailing whitespace, drops blank lines, and ends with a
/// single newline.
pub fn normalize_listing(raw: &str) -> String {
    let mut out = String::new();
    for line in raw.lines() {
        let t = line.trim_end();
        if t.is_empty() {
            continue;
        }
        out.push_str(t);
        out.push('\n');
    }
    out
}

/// JSON form of a tree: `{"base_query": ..., "nodes": [{"path","text"}, ...]}`
/// with nodes in canonical preorder.
impl Serialize for QTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            base_query: &'a str,
            nodes: Vec<QNode>,
        }
        Repr {
            base_query: &self.base_query,
            nodes: self
                .nodes()
                .map(|(path, text)| QNode {
                    path,
                    text: text.to_string(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            base_query: String,
            nodes: Vec<QNode>,
        }
        let repr = Repr::deserialize(d)?;
        QTree::new(repr.base_query, repr.nodes).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CANONICAL: &str = include_str!("../tests/fixtures/canonical_tree.txt");

    fn canonical() -> QTree {
        parse_tree("Describe the film The Woman Hunt.", CANONICAL).unwrap()
    }

    #[test]
    fn path_ordering_is_preorder() {
        let all = TreePath::all();
        assert_eq!(all.len(), NODE_COUNT);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        let p = |s: &str| s.parse::<TreePath>().unwrap();
        assert!(p("1") < p("1.1"));
        assert!(p("1.1.3") < p("1.2"));
        assert!(p("1.3.3") < p("2"));
    }

    #[test]
    fn path_parse_and_display_round_trip() {
        for path in TreePath::all() {
            assert_eq!(path.to_string().parse::<TreePath>().unwrap(), path);
        }
        assert!("1.4".parse::<TreePath>().is_err());
        assert!("0".parse::<TreePath>().is_err());
        assert!("1.1.1.1".parse::<TreePath>().is_err());
        assert!("".parse::<TreePath>().is_err());
        assert!("x.y".parse::<TreePath>().is_err());
    }

    #[test]
    fn canonical_tree_parses_to_39_nodes() {
        let tree = canonical();
        assert_eq!(tree.len(), 39);
        for (depth, expected) in [(1, 3), (2, 9), (3, 27)] {
            let got = tree.nodes().filter(|(p, _)| p.depth() == depth).count();
            assert_eq!(got, expected, "depth {depth}");
        }
        assert_eq!(
            tree.text("1.1.2".parse().unwrap()),
            "What is the climax of The Woman Hunt?"
        );
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let tree = canonical();
        assert_eq!(render_tree(&tree), normalize_listing(CANONICAL));
    }

    #[test]
    fn parse_tolerates_blank_lines_and_trailing_ws() {
        let loose = CANONICAL.replace("1.1.3. How does The Woman Hunt end?", "1.1.3. How does The Woman Hunt end?   \n");
        let tree = parse_tree("q", &loose).unwrap();
        assert_eq!(tree.text("1.1.3".parse().unwrap()), "How does The Woman Hunt end?");
    }

    #[test]
    fn roots_only_is_wrong_fanout() {
        let err = parse_tree("q", "1. a\n2. b\n3. c\n").unwrap_err();
        assert!(matches!(err, ParseError::WrongFanout { ref parent, got: 0 } if parent == "1"));
    }

    #[test]
    fn duplicated_text_is_rejected() {
        let mutated = CANONICAL.replace(
            "3.3.2. How does The Woman Hunt rank among other films of its genre?",
            "3.3.2. Are there any film festivals where The Woman Hunt was highlighted?",
        );
        let err = parse_tree("q", &mutated).unwrap_err();
        match err {
            ParseError::DuplicateText { first, second } => {
                assert_eq!(first.to_string(), "3.3.2");
                assert_eq!(second.to_string(), "3.3.3");
            }
            other => panic!("expected DuplicateText, got {other:?}"),
        }
    }

    #[test]
    fn child_before_parent_is_a_path_gap() {
        let err = parse_tree("q", "    1.2. orphan\n").unwrap_err();
        assert!(matches!(err, ParseError::PathGap { line: 1, .. }));
    }

    #[test]
    fn bad_indent_and_missing_prefix_are_malformed() {
        assert!(matches!(
            parse_tree("q", "no prefix here\n"),
            Err(ParseError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_tree("q", "  1. wrong indent\n"),
            Err(ParseError::MalformedLine { .. })
        ));
        // numbering depth disagrees with indentation
        assert!(matches!(
            parse_tree("q", "1.1. depth two at column zero\n"),
            Err(ParseError::MalformedLine { .. })
        ));
    }

    #[test]
    fn fourth_sibling_is_wrong_fanout() {
        let extra = format!("{CANONICAL}4. a fourth branch\n");
        assert!(matches!(
            parse_tree("q", &extra),
            Err(ParseError::WrongFanout { .. })
        ));
    }

    #[test]
    fn duplicate_path_line_is_rejected() {
        let dup = "1. a\n1. b\n";
        assert!(matches!(
            parse_tree("q", dup),
            Err(ParseError::DuplicatePath { line: 2, .. })
        ));
    }

    #[test]
    fn neighbor_sets_match_adjacency_definition() {
        let tree = canonical();
        let p = |s: &str| s.parse::<TreePath>().unwrap();
        let as_set = |items: &[&str]| -> BTreeSet<TreePath> {
            items.iter().map(|s| p(s)).collect()
        };
        assert_eq!(
            tree.neighbors(p("1.1")),
            as_set(&["1", "1.2", "1.3", "1.1.1", "1.1.2", "1.1.3"])
        );
        assert_eq!(tree.neighbors(p("2")), as_set(&["1", "3", "2.1", "2.2", "2.3"]));
        assert_eq!(tree.neighbors(p("3.3.3")), as_set(&["3.3", "3.3.1", "3.3.2"]));
    }

    #[test]
    fn neighbor_counts_per_depth() {
        let tree = canonical();
        for (path, _) in tree.nodes() {
            let expected = match path.depth() {
                1 => 5,
                2 => 6,
                _ => 3,
            };
            assert_eq!(tree.neighbors(path).len(), expected, "at {path}");
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        let tree = canonical();
        for (p, _) in tree.nodes() {
            for q in tree.neighbors(p) {
                assert!(tree.neighbors(q).contains(&p), "{q} !~ {p}");
            }
        }
    }

    #[test]
    fn json_round_trip_preserves_tree() {
        let tree = canonical();
        let json = serde_json::to_string(&tree).unwrap();
        let back: QTree = serde_json::from_str(&json).unwrap();
        assert_eq!(tree, back);
        // canonical ordering in the serialized form
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let paths: Vec<&str> = value["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["path"].as_str().unwrap())
            .collect();
        assert_eq!(paths[0], "1");
        assert_eq!(paths[1], "1.1");
        assert_eq!(paths[2], "1.1.1");
        assert_eq!(paths.len(), 39);
    }

    #[test]
    fn json_with_missing_node_fails_validation() {
        let tree = canonical();
        let mut value = serde_json::to_value(&tree).unwrap();
        value["nodes"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<QTree>(value).is_err());
    }
}
