//! The NAS-Bench-201 cell genome.
//!
//! A cell is a four-node DAG with one operation on each of its six edges.
//! Edges are stored in the fixed order `(0→1), (0→2), (1→2), (0→3), (1→3), (2→3)`,
//! which is also the order used by the cell-string format and by [`ArchEncoding::index`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of edges in a cell.
pub const NUM_EDGES: usize = 6;
/// Number of candidate operations per edge.
pub const NUM_OPS: usize = 5;
/// Size of the search space, `5^6`.
pub const SPACE_SIZE: usize = 15625;

/// `(source, target)` node pair for each edge.
pub const EDGE_NODES: [(usize, usize); NUM_EDGES] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operation {
    None,
    SkipConnect,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl Operation {
    pub const ALL: [Operation; NUM_OPS] = [
        Operation::None,
        Operation::SkipConnect,
        Operation::Conv1x1,
        Operation::Conv3x3,
        Operation::AvgPool3x3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Tag used by NAS-Bench-201 cell strings.
    pub fn tag(self) -> &'static str {
        match self {
            Operation::None => "none",
            Operation::SkipConnect => "skip_connect",
            Operation::Conv1x1 => "nor_conv_1x1",
            Operation::Conv3x3 => "nor_conv_3x3",
            Operation::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.tag() == tag)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseArchError {
    #[error("malformed cell string at `{token}`: {reason}")]
    Structure { token: String, reason: &'static str },
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
}

/// One architecture: an operation per edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchEncoding {
    ops: [Operation; NUM_EDGES],
}

impl ArchEncoding {
    pub fn new(ops: [Operation; NUM_EDGES]) -> Self {
        Self { ops }
    }

    pub fn uniform(op: Operation) -> Self {
        Self { ops: [op; NUM_EDGES] }
    }

    pub fn ops(&self) -> &[Operation; NUM_EDGES] {
        &self.ops
    }

    pub fn op(&self, edge: usize) -> Operation {
        self.ops[edge]
    }

    /// Base-5 integer in `[0, 15624]`; edge 5 is least significant.
    pub fn index(&self) -> usize {
        self.ops.iter().fold(0, |acc, op| acc * NUM_OPS + op.index())
    }

    /// Inverse of [`ArchEncoding::index`].
    pub fn from_index(mut index: usize) -> Option<Self> {
        if index >= SPACE_SIZE {
            return None;
        }
        let mut ops = [Operation::None; NUM_EDGES];
        for slot in ops.iter_mut().rev() {
            *slot = Operation::ALL[index % NUM_OPS];
            index /= NUM_OPS;
        }
        Some(Self { ops })
    }

    /// Number of edges on which two architectures differ.
    pub fn hamming(&self, other: &Self) -> usize {
        self.ops.iter().zip(other.ops.iter()).filter(|(a, b)| a != b).count()
    }

    /// Replace the op on `edge`, returning the new architecture.
    pub fn with_op(&self, edge: usize, op: Operation) -> Self {
        let mut ops = self.ops;
        ops[edge] = op;
        Self { ops }
    }

    /// Canonical cell string, e.g. `|none~0|+|none~0|none~1|+|none~0|none~1|none~2|`.
    pub fn encode_str(&self) -> String {
        let mut out = String::with_capacity(96);
        let mut edge = 0;
        for target in 1..=3 {
            if target > 1 {
                out.push('+');
            }
            out.push('|');
            for source in 0..target {
                out.push_str(self.ops[edge].tag());
                out.push('~');
                out.push_str(&source.to_string());
                out.push('|');
                edge += 1;
            }
        }
        out
    }

    pub fn parse_str(text: &str) -> Result<Self, ParseArchError> {
        let structure = |token: &str, reason| ParseArchError::Structure {
            token: token.to_string(),
            reason,
        };
        let groups: Vec<&str> = text.split('+').collect();
        if groups.len() != 3 {
            return Err(structure(text, "expected three `+`-separated node groups"));
        }
        let mut ops = [Operation::None; NUM_EDGES];
        let mut edge = 0;
        for (g, group) in groups.iter().enumerate() {
            let inner = group
                .strip_prefix('|')
                .and_then(|s| s.strip_suffix('|'))
                .ok_or_else(|| structure(group, "node group must be wrapped in `|`"))?;
            let tokens: Vec<&str> = inner.split('|').collect();
            if tokens.len() != g + 1 {
                return Err(structure(group, "wrong number of inputs for node"));
            }
            for (source, token) in tokens.iter().enumerate() {
                let (tag, node) = token
                    .split_once('~')
                    .ok_or_else(|| structure(token, "expected `op~source`"))?;
                if node.parse::<usize>().ok() != Some(source) {
                    return Err(structure(token, "wrong source-node index"));
                }
                ops[edge] = Operation::from_tag(tag).ok_or_else(|| ParseArchError::UnknownOp(tag.to_string()))?;
                edge += 1;
            }
        }
        Ok(Self { ops })
    }
}

impl fmt::Display for ArchEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode_str())
    }
}

impl FromStr for ArchEncoding {
    type Err = ParseArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_str(s)
    }
}

impl Serialize for ArchEncoding {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.encode_str())
    }
}

impl<'de> Deserialize<'de> for ArchEncoding {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Draw every edge independently and uniformly from the five operations.
pub fn random_arch<R: Rng + ?Sized>(rng: &mut R) -> ArchEncoding {
    let mut ops = [Operation::None; NUM_EDGES];
    for slot in ops.iter_mut() {
        *slot = Operation::ALL[rng.random_range(0..NUM_OPS)];
    }
    ArchEncoding { ops }
}

/// Change exactly one edge to a different operation.
///
/// The edge is uniform over the six edges and the replacement is uniform
/// over the four operations other than the current one.
pub fn mutate<R: Rng + ?Sized>(parent: &ArchEncoding, rng: &mut R) -> ArchEncoding {
    let edge = rng.random_range(0..NUM_EDGES);
    let current = parent.ops[edge].index();
    let mut pick = rng.random_range(0..NUM_OPS - 1);
    if pick >= current {
        pick += 1;
    }
    parent.with_op(edge, Operation::ALL[pick])
}

/// All 15625 cells in base-5 order, starting at all-`none`.
pub fn enumerate_all() -> impl Iterator<Item = ArchEncoding> {
    (0..SPACE_SIZE).map(|i| ArchEncoding::from_index(i).expect("index in range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    struct ZeroRng;

    impl rand::RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0)
        }
    }

    #[test]
    fn zero_stream_yields_all_none() {
        assert_eq!(random_arch(&mut ZeroRng), ArchEncoding::uniform(Operation::None));
    }

    #[test]
    fn random_arch_marginals_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [[0usize; NUM_OPS]; NUM_EDGES];
        for _ in 0..draws {
            let a = random_arch(&mut rng);
            for (e, op) in a.ops().iter().enumerate() {
                counts[e][op.index()] += 1;
            }
        }
        for edge in counts {
            for c in edge {
                let freq = c as f64 / draws as f64;
                assert!((freq - 0.2).abs() <= 0.01, "freq {freq}");
            }
        }
    }

    #[test]
    fn random_arch_covers_the_space() {
        // Expected distinct count after 200k draws is 15625 * (1 - e^-12.8) ≈ 15625.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen: HashSet<_> = (0..200_000).map(|_| random_arch(&mut rng).index()).collect();
        assert!(seen.len() >= 15_000, "{}", seen.len());
    }

    #[test]
    fn single_edge_substitution() {
        let parent = ArchEncoding::uniform(Operation::None);
        let child = parent.with_op(2, Operation::SkipConnect);
        assert_eq!(child.op(2), Operation::SkipConnect);
        assert_eq!(parent.hamming(&child), 1);
        for e in [0, 1, 3, 4, 5] {
            assert_eq!(child.op(e), Operation::None);
        }
    }

    #[test]
    fn mutation_replacement_excludes_incumbent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parent = ArchEncoding::uniform(Operation::Conv3x3);
        let mut seen = HashSet::new();
        for _ in 0..2000 {
            let child = mutate(&parent, &mut rng);
            let edge = (0..NUM_EDGES).find(|&e| child.op(e) != parent.op(e)).unwrap();
            seen.insert(child.op(edge));
        }
        assert_eq!(seen.len(), 4);
        assert!(!seen.contains(&Operation::Conv3x3));
    }

    #[test]
    fn encode_known_strings() {
        assert_eq!(
            ArchEncoding::uniform(Operation::None).encode_str(),
            "|none~0|+|none~0|none~1|+|none~0|none~1|none~2|"
        );
        let a = ArchEncoding::new([
            Operation::Conv3x3,
            Operation::None,
            Operation::SkipConnect,
            Operation::None,
            Operation::None,
            Operation::AvgPool3x3,
        ]);
        assert_eq!(
            a.encode_str(),
            "|nor_conv_3x3~0|+|none~0|skip_connect~1|+|none~0|none~1|avg_pool_3x3~2|"
        );
    }

    #[test]
    fn parse_rejects_bad_input() {
        let err = ArchEncoding::parse_str("|bad_op~0|+|none~0|none~1|+|none~0|none~1|none~2|").unwrap_err();
        assert_eq!(err, ParseArchError::UnknownOp("bad_op".into()));

        let err = ArchEncoding::parse_str("|none~1|+|none~0|none~1|+|none~0|none~1|none~2|").unwrap_err();
        match err {
            ParseArchError::Structure { token, .. } => assert_eq!(token, "none~1"),
            other => panic!("unexpected {other:?}"),
        }

        for bad in [
            "",
            "|none~0|",
            "|none~0|+|none~0|+|none~0|none~1|none~2|",
            "none~0|+|none~0|none~1|+|none~0|none~1|none~2|",
            "|none0|+|none~0|none~1|+|none~0|none~1|none~2|",
            "|none~0|+|none~0|none~1|+|none~0|none~1|none~2|+|none~0|",
        ] {
            assert!(matches!(ArchEncoding::parse_str(bad), Err(ParseArchError::Structure { .. })), "{bad}");
        }
    }

    #[test]
    fn enumeration_is_ordered_and_complete() {
        let all: Vec<_> = enumerate_all().collect();
        assert_eq!(all.len(), 15625);
        assert_eq!(all[0], ArchEncoding::uniform(Operation::None));
        assert_eq!(all[SPACE_SIZE - 1], ArchEncoding::uniform(Operation::AvgPool3x3));
        // edge 5 least significant
        assert_eq!(all[1].op(5), Operation::SkipConnect);
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        for (i, a) in all.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(ArchEncoding::parse_str(&a.encode_str()).unwrap(), *a);
        }
        assert!(ArchEncoding::from_index(SPACE_SIZE).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arch() -> impl Strategy<Value = ArchEncoding> {
            (0..SPACE_SIZE).prop_map(|i| ArchEncoding::from_index(i).unwrap())
        }

        proptest! {
            #[test]
            fn mutate_differs_on_exactly_one_edge(parent in arch(), seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let child = mutate(&parent, &mut rng);
                prop_assert_eq!(parent.hamming(&child), 1);
            }

            #[test]
            fn serde_uses_cell_string(a in arch()) {
                let json = serde_json::to_string(&a).unwrap();
                prop_assert_eq!(&json, &format!("\"{}\"", a.encode_str()));
                let back: ArchEncoding = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, a);
            }
        }
    }
}
