#![allow(dead_code)]

use cellnas_core::cellspace::{BlockSpec, CellSpec, InputRef, OperatorSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ops(tokens: &[&str]) -> Vec<OperatorSpec> {
    tokens.iter().map(|t| OperatorSpec::parse(t).unwrap()).collect()
}

/// A uniformly built random valid cell with `blocks` blocks.
pub fn random_cell(rng: &mut impl Rng, blocks: usize, lookback: u32, operators: &[OperatorSpec]) -> CellSpec {
    let mut out = Vec::with_capacity(blocks);
    for j in 0..blocks {
        let mut input = || {
            let choices = lookback as usize + j;
            let k = rng.gen_range(0..choices);
            if k < lookback as usize {
                -(k as InputRef) - 1
            } else {
                (k - lookback as usize) as InputRef
            }
        };
        let (in1, in2) = (input(), input());
        let op1 = operators.choose(rng).unwrap().clone();
        let op2 = operators.choose(rng).unwrap().clone();
        out.push(BlockSpec::new(in1, op1, in2, op2));
    }
    CellSpec::from_blocks(out).unwrap()
}

/// Applies a block order (must respect dependencies) and per-block pair swaps.
pub fn relabel(cell: &CellSpec, order: &[usize], swaps: &[bool]) -> Option<CellSpec> {
    let mut pos = vec![usize::MAX; cell.len()];
    for (p, &old) in order.iter().enumerate() {
        pos[old] = p;
    }
    let mut blocks = Vec::with_capacity(cell.len());
    for (p, &old) in order.iter().enumerate() {
        let b = &cell.blocks()[old];
        let map = |i: InputRef| -> Option<InputRef> {
            if i < 0 {
                Some(i)
            } else if pos[i as usize] < p {
                Some(pos[i as usize] as InputRef)
            } else {
                None
            }
        };
        let (in1, in2) = (map(b.in1)?, map(b.in2)?);
        let mut nb = BlockSpec::new(in1, b.op1.clone(), in2, b.op2.clone());
        if swaps[p] {
            nb = nb.swapped();
        }
        blocks.push(nb);
    }
    Some(CellSpec::from_blocks(blocks).unwrap())
}

/// A random dependency-respecting relabeling of `cell`.
pub fn random_relabel(cell: &CellSpec, seed: u64) -> CellSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cell.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let ready: Vec<usize> = (0..n)
            .filter(|&j| !placed[j])
            .filter(|&j| cell.blocks()[j].inputs().iter().all(|&i| i < 0 || placed[i as usize]))
            .collect();
        let pick = *ready.choose(&mut rng).unwrap();
        placed[pick] = true;
        order.push(pick);
    }
    let swaps: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    relabel(cell, &order, &swaps).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Brute-force isomorphism: some block permutation plus pair swaps maps `a`
/// onto `b` exactly.
pub fn brute_force_isomorphic(a: &CellSpec, b: &CellSpec) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let n = a.len();
    for order in permutations(n) {
        for mask in 0..(1u32 << n) {
            let swaps: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            if relabel(a, &order, &swaps).is_some_and(|r| r.blocks() == b.blocks()) {
                return true;
            }
        }
    }
    false
}
