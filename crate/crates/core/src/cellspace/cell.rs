use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CellError, OperatorSpec};

/// Input reference of a block operator: negative values are lookbacks to
/// previous cells (`-1` the previous one), non-negative values index earlier
/// blocks of the same cell.
pub type InputRef = i32;

/// One `(in1, op1, in2, op2)` tuple. The two operator outputs are summed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub in1: InputRef,
    pub op1: OperatorSpec,
    pub in2: InputRef,
    pub op2: OperatorSpec,
}

fn pair_cmp(a: (InputRef, &OperatorSpec), b: (InputRef, &OperatorSpec)) -> Ordering {
    a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

impl BlockSpec {
    pub fn new(in1: InputRef, op1: OperatorSpec, in2: InputRef, op2: OperatorSpec) -> Self {
        Self { in1, op1, in2, op2 }
    }

    /// Orders the two `(input, operator)` pairs so that a block and its
    /// mirrored encoding compare equal.
    pub fn canonical(&self) -> BlockSpec {
        if pair_cmp((self.in2, &self.op2), (self.in1, &self.op1)) == Ordering::Less {
            self.swapped()
        } else {
            self.clone()
        }
    }

    pub fn swapped(&self) -> BlockSpec {
        BlockSpec::new(self.in2, self.op2.clone(), self.in1, self.op1.clone())
    }

    pub fn is_canonical(&self) -> bool {
        pair_cmp((self.in1, &self.op1), (self.in2, &self.op2)) != Ordering::Greater
    }

    pub fn inputs(&self) -> [InputRef; 2] {
        [self.in1, self.in2]
    }

    pub fn operators(&self) -> [&OperatorSpec; 2] {
        [&self.op1, &self.op2]
    }

    pub fn pairs(&self) -> [(InputRef, &OperatorSpec); 2] {
        [(self.in1, &self.op1), (self.in2, &self.op2)]
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, '{}', {}, '{}')", self.in1, self.op1, self.in2, self.op2)
    }
}

/// A cell: an ordered list of blocks forming a DAG with a single output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CellSpec {
    blocks: Vec<BlockSpec>,
}

/// Structural summaries of a cell DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagViews {
    /// Blocks consumed by at least one later block.
    pub used: BTreeSet<usize>,
    /// Blocks whose outputs are concatenated into the cell output.
    pub unused: BTreeSet<usize>,
    /// Longest chain of blocks.
    pub depth: usize,
    /// Block-index input slots summed over all blocks.
    pub edges: usize,
    pub lookbacks_used: BTreeSet<InputRef>,
}

impl CellSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a cell, checking that every input reference is legal: a
    /// lookback within `max_lookback` or an index of an earlier block.
    pub fn new(blocks: Vec<BlockSpec>, max_lookback: u32) -> Result<Self, CellError> {
        let cell = Self { blocks };
        cell.validate(max_lookback)?;
        Ok(cell)
    }

    /// Builds a cell checking only that block references point backwards.
    pub fn from_blocks(blocks: Vec<BlockSpec>) -> Result<Self, CellError> {
        Self::new(blocks, u32::MAX)
    }

    pub(crate) fn from_blocks_unchecked(blocks: Vec<BlockSpec>) -> Self {
        Self { blocks }
    }

    pub fn validate(&self, max_lookback: u32) -> Result<(), CellError> {
        for (j, block) in self.blocks.iter().enumerate() {
            for input in block.inputs() {
                let ok = if input < 0 {
                    input.unsigned_abs() <= max_lookback
                } else {
                    (input as usize) < j
                };
                if !ok {
                    return Err(CellError::InvalidInput { block: j, input });
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn operators(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.blocks.iter().flat_map(|b| [&b.op1, &b.op2])
    }

    pub fn inputs(&self) -> impl Iterator<Item = InputRef> + '_ {
        self.blocks.iter().flat_map(|b| [b.in1, b.in2])
    }

    /// The same cell with every block in canonical pair order.
    pub fn with_canonical_blocks(&self) -> CellSpec {
        CellSpec {
            blocks: self.blocks.iter().map(BlockSpec::canonical).collect(),
        }
    }

    /// Returns a new cell with `block` appended.
    pub fn with_block(&self, block: BlockSpec) -> CellSpec {
        let mut blocks = self.blocks.clone();
        blocks.push(block);
        CellSpec { blocks }
    }

    pub fn lookbacks_used(&self) -> BTreeSet<InputRef> {
        self.inputs().filter(|&i| i < 0).collect()
    }

    pub fn dag_views(&self) -> DagViews {
        let b = self.blocks.len();
        let mut used = BTreeSet::new();
        let mut edges = 0;
        let mut chain = vec![0usize; b];
        for (j, block) in self.blocks.iter().enumerate() {
            let mut longest_input = 0;
            for input in block.inputs() {
                if input >= 0 {
                    edges += 1;
                    used.insert(input as usize);
                    longest_input = longest_input.max(chain[input as usize]);
                }
            }
            chain[j] = longest_input + 1;
        }
        let unused = (0..b).filter(|j| !used.contains(j)).collect();
        DagViews {
            used,
            unused,
            depth: chain.into_iter().max().unwrap_or(0),
            edges,
            lookbacks_used: self.lookbacks_used(),
        }
    }

    /// Parses the bracketed text form, e.g.
    /// `[(-2, 'gru', -1, '21 conv');(0, '2 maxpool', -1, 'identity')]`.
    /// Whitespace between tokens is ignored; block order and pair order are
    /// preserved as written.
    pub fn parse(text: &str) -> Result<Self, CellError> {
        let err = |why: &str| CellError::Syntax {
            text: text.to_string(),
            reason: why.to_string(),
        };
        let body = text
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| err("expected [ ... ]"))?
            .trim();
        if body.is_empty() {
            return Ok(CellSpec::empty());
        }
        let mut blocks = Vec::new();
        for raw in body.split(';') {
            let inner = raw
                .trim()
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| err("expected ( ... ) block"))?;
            let fields: Vec<&str> = inner.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err("block must have four fields"));
            }
            let input = |s: &str| s.parse::<InputRef>().map_err(|_| err("bad input reference"));
            let op = |s: &str| {
                let unquoted = s
                    .strip_prefix('\'')
                    .and_then(|s| s.strip_suffix('\''))
                    .ok_or_else(|| err("operator must be single-quoted"))?;
                OperatorSpec::parse(unquoted)
            };
            blocks.push(BlockSpec::new(
                input(fields[0])?,
                op(fields[1])?,
                input(fields[2])?,
                op(fields[3])?,
            ));
        }
        Self::from_blocks(blocks)
    }
}

impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{block}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for CellSpec {
    type Err = CellError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for CellSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// All legal `(input, operator)` pairs for a new block appended to a cell
/// of `blocks` blocks, in ascending canonical order.
pub fn available_pairs(
    blocks: usize,
    operators: &[OperatorSpec],
    max_lookback: u32,
) -> Vec<(InputRef, OperatorSpec)> {
    let mut ops: Vec<OperatorSpec> = operators.to_vec();
    ops.sort();
    let inputs = (-(max_lookback as InputRef)..0).chain(0..blocks as InputRef);
    inputs
        .flat_map(|i| ops.iter().map(move |o| (i, o.clone())))
        .collect()
}

/// All children of `cell` obtained by appending one canonical block.
///
/// With `p = (b + max_lookback) * |operators|` available pairs the result
/// holds exactly `p (p + 1) / 2` cells, in a deterministic order.
pub fn expand_cell(
    cell: &CellSpec,
    operators: &[OperatorSpec],
    max_lookback: u32,
    max_blocks: usize,
) -> Result<Vec<CellSpec>, CellError> {
    if cell.len() >= max_blocks {
        return Err(CellError::CellComplete(max_blocks));
    }
    let pairs = available_pairs(cell.len(), operators, max_lookback);
    let mut children = Vec::with_capacity(pairs.len() * (pairs.len() + 1) / 2);
    for (i, (in1, op1)) in pairs.iter().enumerate() {
        for (in2, op2) in &pairs[i..] {
            children.push(cell.with_block(BlockSpec::new(*in1, op1.clone(), *in2, op2.clone())));
        }
    }
    Ok(children)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn op(t: &str) -> OperatorSpec {
        OperatorSpec::parse(t).unwrap()
    }

    #[test]
    fn block_canonicalization_orders_by_input_first() {
        let b = BlockSpec::new(-1, op("2x2 maxpool"), -2, op("3x3 conv"));
        assert_eq!(b.canonical(), BlockSpec::new(-2, op("3x3 conv"), -1, op("2x2 maxpool")));
        let sym = BlockSpec::new(-1, op("3x3 conv"), -1, op("3x3 conv"));
        assert_eq!(sym.canonical(), sym);
    }

    #[test]
    fn block_canonicalization_uses_token_order_on_equal_inputs() {
        let b = BlockSpec::new(-1, op("identity"), -1, op("21 conv"));
        assert_eq!(b.canonical().op1.token(), "21 conv");
    }

    #[test]
    fn text_format_round_trip() {
        let text = "[(-2, '7:4dr conv', -2, 'gru');(-2, '7:4dr conv', -2, 'gru');(-2, '13 dconv', -2, 'gru')]";
        let cell = CellSpec::parse(text).unwrap();
        assert_eq!(cell.len(), 3);
        assert_eq!(cell.to_string(), text);
        assert_eq!(CellSpec::parse("[]").unwrap(), CellSpec::empty());
        assert_eq!(CellSpec::empty().to_string(), "[]");
    }

    #[test]
    fn text_format_is_whitespace_tolerant() {
        let cell = CellSpec::parse(" [ ( -2,'gru' ,-1,  '21 conv' ) ] ").unwrap();
        assert_eq!(cell.to_string(), "[(-2, 'gru', -1, '21 conv')]");
    }

    #[test]
    fn text_format_preserves_non_canonical_pairs() {
        let text = "[(-2, 'identity', -2, '21 conv')]";
        assert_eq!(CellSpec::parse(text).unwrap().to_string(), text);
    }

    #[test]
    fn rejects_forward_references() {
        assert!(matches!(
            CellSpec::parse("[(0, 'gru', -1, 'gru')]"),
            Err(CellError::InvalidInput { block: 0, input: 0 })
        ));
        let cell = CellSpec::parse("[(-3, 'gru', -1, 'gru')]").unwrap();
        assert!(cell.validate(2).is_err());
        assert!(CellSpec::parse("[(-1, 'gru', -1)]").is_err());
        assert!(CellSpec::parse("(-1, 'gru', -1, 'gru')").is_err());
        assert!(CellSpec::parse("[(-1, gru, -1, 'gru')]").is_err());
    }

    #[test]
    fn dag_views_single_block() {
        let v = CellSpec::parse("[(-2, '3 conv', -1, '5 conv')]").unwrap().dag_views();
        assert!(v.used.is_empty());
        assert_eq!(v.unused, BTreeSet::from([0]));
        assert_eq!((v.depth, v.edges), (1, 0));
        assert_eq!(v.lookbacks_used, BTreeSet::from([-1, -2]));
    }

    #[test]
    fn dag_views_chain() {
        let v = CellSpec::parse("[(-2, '3 conv', -1, '5 conv');(0, '7 conv', -1, '9 conv')]")
            .unwrap()
            .dag_views();
        assert_eq!(v.unused, BTreeSet::from([1]));
        assert_eq!(v.used, BTreeSet::from([0]));
        assert_eq!((v.depth, v.edges), (2, 1));
    }

    #[test]
    fn dag_views_empty() {
        let v = CellSpec::empty().dag_views();
        assert_eq!((v.depth, v.edges), (0, 0));
        assert!(v.unused.is_empty() && v.lookbacks_used.is_empty());
    }

    #[test]
    fn expansion_counts() {
        let ops: Vec<OperatorSpec> = ["identity", "3x3 dconv", "5x5 dconv", "7x7 dconv", "1x3-3x1 conv",
            "1x5-5x1 conv", "1x7-7x1 conv", "1x1 conv", "3x3 conv", "5x5 conv", "2x2 maxpool", "2x2 avgpool"]
            .iter()
            .map(|t| op(t))
            .collect();
        let first = expand_cell(&CellSpec::empty(), &ops, 2, 5).unwrap();
        assert_eq!(first.len(), 300);
        let second = expand_cell(&first[0], &ops, 2, 5).unwrap();
        assert_eq!(second.len(), 666);
        let distinct: HashSet<String> = second.iter().map(|c| c.to_string()).collect();
        assert_eq!(distinct.len(), 666);
        assert!(second.iter().all(|c| c.blocks().last().unwrap().is_canonical()));

        let single = expand_cell(&CellSpec::empty(), &ops[..1], 1, 5).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn expansion_of_full_cell_fails() {
        let cell = CellSpec::parse("[(-1, 'gru', -1, 'gru')]").unwrap();
        assert!(matches!(expand_cell(&cell, &[op("gru")], 1, 1), Err(CellError::CellComplete(1))));
    }
}
