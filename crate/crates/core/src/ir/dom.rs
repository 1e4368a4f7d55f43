use std::collections::{BTreeMap, BTreeSet};

use super::{BlockId, FuncId, ProgramCfg};

/// Immediate dominators and post-dominators of every block, computed per function
/// over intra-function edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DominatorInfo {
    idom: Vec<Option<BlockId>>,
    ipostdom: Vec<Option<BlockId>>,
    pub loops: LoopInfo,
}

/// Back edges (source dominated by destination) and the natural loops they induce.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoopInfo {
    pub back_edges: Vec<(BlockId, BlockId)>,
    /// Natural loop body per header (union over all back edges into the header).
    pub bodies: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Innermost enclosing loop header of each header, if nested.
    pub parent: BTreeMap<BlockId, BlockId>,
    /// Functions containing a retreating edge whose target does not dominate its source.
    pub irreducible: BTreeSet<FuncId>,
    innermost: Vec<Option<BlockId>>,
}

impl LoopInfo {
    pub fn is_header(&self, b: BlockId) -> bool {
        self.bodies.contains_key(&b)
    }

    pub fn is_back_edge(&self, src: BlockId, dst: BlockId) -> bool {
        self.back_edges.contains(&(src, dst))
    }

    /// Header of the innermost loop containing `b`.
    pub fn innermost(&self, b: BlockId) -> Option<BlockId> {
        self.innermost[b.index()]
    }

    /// Loop headers containing `b`, innermost first.
    pub fn enclosing(&self, b: BlockId) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = self.innermost(b);
        while let Some(h) = cur {
            out.push(h);
            cur = self.parent.get(&h).copied();
        }
        out
    }

    pub fn depth(&self, b: BlockId) -> usize {
        self.enclosing(b).len()
    }
}

impl DominatorInfo {
    /// Immediate dominator; `None` for function entries.
    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        self.idom[b.index()]
    }

    /// Immediate post-dominator; `None` when only the virtual exit post-dominates `b`.
    pub fn ipostdom(&self, b: BlockId) -> Option<BlockId> {
        self.ipostdom[b.index()]
    }

    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.idom(c);
        }
        false
    }
}

/// Cooper-Harvey-Kennedy iterative dominators. Nodes unreachable from `root` get `None`;
/// the root maps to itself.
pub(crate) fn iterative_idom(root: usize, succ: &[Vec<usize>], pred: &[Vec<usize>]) -> Vec<Option<usize>> {
    let n = succ.len();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut stack = vec![(root, 0usize)];
    visited[root] = true;
    while let Some((v, i)) = stack.pop() {
        if i < succ[v].len() {
            stack.push((v, i + 1));
            let w = succ[v][i];
            if !visited[w] {
                visited[w] = true;
                stack.push((w, 0));
            }
        } else {
            order.push(v);
        }
    }
    order.reverse();
    let mut rpo = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        rpo[v] = i;
    }
    let mut idom = vec![None; n];
    idom[root] = Some(root);
    let mut changed = true;
    while changed {
        changed = false;
        for &v in order.iter().skip(1) {
            let mut new: Option<usize> = None;
            for &p in &pred[v] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(mut a) => {
                        let mut b = p;
                        while a != b {
                            while rpo[a] > rpo[b] {
                                a = idom[a].unwrap();
                            }
                            while rpo[b] > rpo[a] {
                                b = idom[b].unwrap();
                            }
                        }
                        a
                    }
                });
            }
            if new.is_some() && idom[v] != new {
                idom[v] = new;
                changed = true;
            }
        }
    }
    idom
}

pub fn compute_dominators(cfg: &ProgramCfg) -> DominatorInfo {
    let nb = cfg.blocks.len();
    let mut idom = vec![None; nb];
    let mut ipostdom = vec![None; nb];
    let mut loops = LoopInfo { innermost: vec![None; nb], ..LoopInfo::default() };
    for f in &cfg.functions {
        let local: BTreeMap<BlockId, usize> = f.blocks.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let n = f.blocks.len();
        let mut succ = vec![Vec::new(); n + 1];
        let mut pred = vec![Vec::new(); n + 1];
        for (i, &b) in f.blocks.iter().enumerate() {
            for &(s, _) in cfg.succs(b) {
                let j = local[&s];
                if !succ[i].contains(&j) {
                    succ[i].push(j);
                    pred[j].push(i);
                }
            }
        }
        let root = local[&f.entry];
        let dom = iterative_idom(root, &succ[..n], &pred[..n]);
        for (i, &b) in f.blocks.iter().enumerate() {
            idom[b.index()] = dom[i].filter(|&d| d != i).map(|d| f.blocks[d]);
        }

        // Post-dominators on the reversed graph with a virtual exit at index n.
        for (i, s) in succ.iter_mut().enumerate().take(n) {
            if s.is_empty() {
                s.push(n);
                pred[n].push(i);
            }
        }
        let pdom = iterative_idom(n, &pred, &succ);
        for (i, &b) in f.blocks.iter().enumerate() {
            ipostdom[b.index()] = pdom[i].filter(|&d| d != n && d != i).map(|d| f.blocks[d]);
        }

        // Retreating edges via DFS; those whose target dominates the source are back edges.
        let dominates = |a: usize, b: usize| {
            let mut c = b;
            loop {
                if c == a {
                    return true;
                }
                match dom[c] {
                    Some(d) if d != c => c = d,
                    _ => return false,
                }
            }
        };
        let mut state = vec![0u8; n];
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some((v, i)) = stack.pop() {
            if i < succ[v].len() {
                stack.push((v, i + 1));
                let w = succ[v][i];
                if w == n {
                    continue;
                }
                match state[w] {
                    0 => {
                        state[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => {
                        if dominates(w, v) {
                            loops.back_edges.push((f.blocks[v], f.blocks[w]));
                        } else {
                            loops.irreducible.insert(f.id);
                        }
                    }
                    _ => {
                        if dominates(w, v) {
                            loops.back_edges.push((f.blocks[v], f.blocks[w]));
                        }
                    }
                }
            } else {
                state[v] = 2;
            }
        }
    }
    loops.back_edges.sort();
    loops.back_edges.dedup();

    for &(src, h) in &loops.back_edges {
        let body = loops.bodies.entry(h).or_insert_with(|| BTreeSet::from([h]));
        let mut work = vec![src];
        while let Some(b) = work.pop() {
            if body.insert(b) {
                work.extend(cfg.preds(b).iter().map(|&(p, _)| p));
            }
        }
    }
    let headers: Vec<BlockId> = loops.bodies.keys().copied().collect();
    for b in 0..nb {
        let bid = BlockId(b as u32);
        loops.innermost[b] = headers
            .iter()
            .filter(|h| loops.bodies[h].contains(&bid))
            .min_by_key(|h| loops.bodies[h].len())
            .copied();
    }
    for &h in &headers {
        let parent = headers
            .iter()
            .filter(|&&o| o != h && loops.bodies[&o].contains(&h))
            .min_by_key(|o| loops.bodies[o].len())
            .copied();
        if let Some(p) = parent {
            loops.parent.insert(h, p);
        }
    }
    DominatorInfo { idom, ipostdom, loops }
}
