//! Canonical forms of cells up to isomorphism.
//!
//! Two cells are isomorphic when one can be turned into the other by
//! swapping the two pairs of any block and by relabeling blocks in any
//! order that keeps every block after the blocks it consumes. The canonical
//! form is the lexicographically smallest such relabeling; it is found by a
//! branch-and-bound walk over the topological orders of the block DAG.

use std::cmp::Ordering;

use super::{BlockSpec, CellError, CellSpec, InputRef, OperatorSpec};

pub const DEFAULT_CANONICAL_BOUND: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsoScope {
    /// Block pair swaps and block relabelings.
    #[default]
    Full,
    /// Only the mirrored pair encoding of each block is folded.
    PairSwapOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct Canonicalizer {
    pub scope: IsoScope,
    pub bound: usize,
}

impl Default for Canonicalizer {
    fn default() -> Self {
        Self {
            scope: IsoScope::Full,
            bound: DEFAULT_CANONICAL_BOUND,
        }
    }
}

type Key = (InputRef, u32, InputRef, u32);

struct Search<'a> {
    blocks: &'a [BlockSpec],
    op_rank: Vec<[u32; 2]>,
    preds: Vec<Vec<usize>>,
    placed: Vec<Option<usize>>,
    order: Vec<usize>,
    prefix: Vec<Key>,
    best: Option<(Vec<Key>, Vec<usize>)>,
}

impl Search<'_> {
    fn key_for(&self, old: usize) -> Key {
        let block = &self.blocks[old];
        let map = |i: InputRef| {
            if i < 0 {
                i
            } else {
                self.placed[i as usize].expect("predecessor placed") as InputRef
            }
        };
        let a = (map(block.in1), self.op_rank[old][0]);
        let b = (map(block.in2), self.op_rank[old][1]);
        let (lo, hi) = if b < a { (b, a) } else { (a, b) };
        (lo.0, lo.1, hi.0, hi.1)
    }

    fn walk(&mut self) {
        let n = self.blocks.len();
        let pos = self.order.len();
        if pos == n {
            let better = match &self.best {
                None => true,
                Some((best, _)) => self.prefix < *best,
            };
            if better {
                self.best = Some((self.prefix.clone(), self.order.clone()));
            }
            return;
        }
        for old in 0..n {
            if self.placed[old].is_some() || self.preds[old].iter().any(|&p| self.placed[p].is_none()) {
                continue;
            }
            let key = self.key_for(old);
            if let Some((best, _)) = &self.best {
                // equal prefixes are still explored, strictly larger ones cannot win
                match self.prefix.as_slice().cmp(&best[..pos]) {
                    Ordering::Less => {}
                    Ordering::Equal if key > best[pos] => continue,
                    Ordering::Equal => {}
                    Ordering::Greater => return,
                }
            }
            self.placed[old] = Some(pos);
            self.order.push(old);
            self.prefix.push(key);
            self.walk();
            self.prefix.pop();
            self.order.pop();
            self.placed[old] = None;
        }
    }
}

impl Canonicalizer {
    pub fn pair_swap_only() -> Self {
        Self {
            scope: IsoScope::PairSwapOnly,
            ..Self::default()
        }
    }

    /// The canonical representative cell of the isomorphism class.
    pub fn representative(&self, cell: &CellSpec) -> Result<CellSpec, CellError> {
        if cell.len() > self.bound {
            return Err(CellError::CellTooLarge {
                blocks: cell.len(),
                bound: self.bound,
            });
        }
        if self.scope == IsoScope::PairSwapOnly || cell.len() <= 1 {
            return Ok(cell.with_canonical_blocks());
        }
        let blocks = cell.blocks();
        let mut tokens: Vec<&OperatorSpec> = cell.operators().collect();
        tokens.sort();
        tokens.dedup();
        let rank = |o: &OperatorSpec| tokens.binary_search(&o).expect("operator present") as u32;
        let mut search = Search {
            blocks,
            op_rank: blocks.iter().map(|b| [rank(&b.op1), rank(&b.op2)]).collect(),
            preds: blocks
                .iter()
                .map(|b| b.inputs().iter().filter(|&&i| i >= 0).map(|&i| i as usize).collect())
                .collect(),
            placed: vec![None; blocks.len()],
            order: Vec::with_capacity(blocks.len()),
            prefix: Vec::with_capacity(blocks.len()),
            best: None,
        };
        search.walk();
        let (_, order) = search.best.expect("a DAG has at least one topological order");
        let mut new_index = vec![0usize; blocks.len()];
        for (pos, &old) in order.iter().enumerate() {
            new_index[old] = pos;
        }
        let remap = |i: InputRef| if i < 0 { i } else { new_index[i as usize] as InputRef };
        let relabeled = order
            .iter()
            .map(|&old| {
                let b = &blocks[old];
                BlockSpec::new(remap(b.in1), b.op1.clone(), remap(b.in2), b.op2.clone()).canonical()
            })
            .collect();
        Ok(CellSpec::from_blocks_unchecked(relabeled))
    }

    pub fn canonical_form(&self, cell: &CellSpec) -> Result<String, CellError> {
        Ok(self.representative(cell)?.to_string())
    }
}

/// Canonical text form under full isomorphism with the default size bound.
pub fn canonical_form(cell: &CellSpec) -> Result<String, CellError> {
    Canonicalizer::default().canonical_form(cell)
}
