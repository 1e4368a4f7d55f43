use std::collections::VecDeque;

use thiserror::Error;

use super::{BlockId, DominatorInfo, EdgeKind, FuncId, ProgramCfg};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BallLarusError {
    #[error("irreducible-cfg: function `{0}` has a cycle without a dominating header")]
    Irreducible(String),
    #[error("path-count-overflow: function `{0}` has more than 2^128 acyclic paths")]
    Overflow(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlNode {
    Entry,
    Exit,
    Block(BlockId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlEdge {
    pub src: BlNode,
    pub dst: BlNode,
    /// `None` for the synthetic entry/exit and back-edge replacement edges.
    pub kind: Option<EdgeKind>,
    pub increment: u128,
}

/// Back edge `src -> header`: the running path number is closed with `end_increment`
/// and restarted at `reset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackEdgeReset {
    pub src: BlockId,
    pub header: BlockId,
    pub end_increment: u128,
    pub reset: u128,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BallLarusNumbering {
    pub func: FuncId,
    pub edges: Vec<BlEdge>,
    pub num_paths: u128,
    pub back_edge_resets: Vec<BackEdgeReset>,
}

impl BallLarusNumbering {
    /// Increment of a real CFG edge (not a back edge).
    pub fn increment(&self, src: BlockId, dst: BlockId, kind: EdgeKind) -> Option<u128> {
        self.edges
            .iter()
            .find(|e| e.src == BlNode::Block(src) && e.dst == BlNode::Block(dst) && e.kind == Some(kind))
            .map(|e| e.increment)
    }

    /// Initial path value when the function is entered.
    pub fn entry_increment(&self) -> u128 {
        self.edges
            .iter()
            .find(|e| e.src == BlNode::Entry && e.kind == Some(EdgeKind::Fallthrough))
            .map(|e| e.increment)
            .unwrap_or(0)
    }

    /// Increment closing a path that leaves the function at `b` (return, exit, call site).
    pub fn exit_increment(&self, b: BlockId) -> Option<u128> {
        self.edges
            .iter()
            .find(|e| e.src == BlNode::Block(b) && e.dst == BlNode::Exit && e.kind.is_none())
            .map(|e| e.increment)
    }

    pub fn back_edge(&self, src: BlockId, header: BlockId) -> Option<&BackEdgeReset> {
        self.back_edge_resets.iter().find(|r| r.src == src && r.header == header)
    }

    /// All complete ENTRY→EXIT path sums by exhaustive enumeration (for small functions).
    pub fn enumerate_path_sums(&self) -> Vec<u128> {
        let mut out = Vec::new();
        let mut stack = vec![(BlNode::Entry, 0u128)];
        while let Some((node, sum)) = stack.pop() {
            if node == BlNode::Exit {
                out.push(sum);
                continue;
            }
            for e in self.edges.iter().filter(|e| e.src == node) {
                stack.push((e.dst, sum + e.increment));
            }
        }
        out
    }
}

/// Ball-Larus numbering of `func` over its intra-function CFG with back edges removed.
///
/// The DAG gets an ENTRY node feeding the function entry, an EXIT node fed by every
/// block without successors, and for each back edge `u -> h` the pair `ENTRY -> h`,
/// `u -> EXIT`.
pub fn ball_larus_number(
    cfg: &ProgramCfg,
    dom: &DominatorInfo,
    func: FuncId,
) -> Result<BallLarusNumbering, BallLarusError> {
    let f = cfg.function(func);
    if dom.loops.irreducible.contains(&func) {
        return Err(BallLarusError::Irreducible(f.name.clone()));
    }
    let mut edges: Vec<BlEdge> = Vec::new();
    let mk = |src, dst, kind| BlEdge { src, dst, kind, increment: 0 };
    edges.push(mk(BlNode::Entry, BlNode::Block(f.entry), Some(EdgeKind::Fallthrough)));
    let mut back = Vec::new();
    for &b in &f.blocks {
        let succs = cfg.succs(b);
        if succs.is_empty() {
            edges.push(mk(BlNode::Block(b), BlNode::Exit, None));
        }
        for &(s, kind) in succs {
            if dom.loops.is_back_edge(b, s) {
                if !back.contains(&(b, s)) {
                    back.push((b, s));
                    edges.push(mk(BlNode::Entry, BlNode::Block(s), None));
                    edges.push(mk(BlNode::Block(b), BlNode::Exit, None));
                }
            } else {
                edges.push(mk(BlNode::Block(b), BlNode::Block(s), Some(kind)));
            }
        }
    }

    // Topological order (Kahn); nodes indexed Entry=0, Exit=1, blocks 2.. in declaration order.
    let index = |n: BlNode| match n {
        BlNode::Entry => 0,
        BlNode::Exit => 1,
        BlNode::Block(b) => 2 + f.blocks.iter().position(|&x| x == b).expect("block of function"),
    };
    let count = f.blocks.len() + 2;
    let mut indeg = vec![0usize; count];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, e) in edges.iter().enumerate() {
        indeg[index(e.dst)] += 1;
        out[index(e.src)].push(i);
    }
    let mut queue: VecDeque<usize> = (0..count).filter(|&v| indeg[v] == 0).collect();
    let mut topo = Vec::with_capacity(count);
    while let Some(v) = queue.pop_front() {
        topo.push(v);
        for &ei in &out[v] {
            let d = index(edges[ei].dst);
            indeg[d] -= 1;
            if indeg[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    if topo.len() != count {
        return Err(BallLarusError::Irreducible(f.name.clone()));
    }

    let mut num_paths = vec![0u128; count];
    for &v in topo.iter().rev() {
        if v == 1 {
            num_paths[v] = 1;
            continue;
        }
        let mut total: u128 = 0;
        for &ei in &out[v] {
            edges[ei].increment = total;
            total = total
                .checked_add(num_paths[index(edges[ei].dst)])
                .ok_or_else(|| BallLarusError::Overflow(f.name.clone()))?;
        }
        num_paths[v] = total;
    }

    let back_edge_resets = back
        .iter()
        .map(|&(u, h)| BackEdgeReset {
            src: u,
            header: h,
            end_increment: edges
                .iter()
                .find(|e| e.src == BlNode::Block(u) && e.dst == BlNode::Exit && e.kind.is_none())
                .map(|e| e.increment)
                .unwrap_or(0),
            reset: edges
                .iter()
                .find(|e| e.src == BlNode::Entry && e.dst == BlNode::Block(h) && e.kind.is_none())
                .map(|e| e.increment)
                .unwrap_or(0),
        })
        .collect();
    Ok(BallLarusNumbering { func, edges, num_paths: num_paths[0], back_edge_resets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::compute_dominators;

    fn number(text: &str) -> (ProgramCfg, BallLarusNumbering) {
        let cfg = ProgramCfg::load(text).unwrap();
        let dom = compute_dominators(&cfg);
        let bl = ball_larus_number(&cfg, &dom, FuncId(0)).unwrap();
        (cfg, bl)
    }

    #[test]
    fn straight_line() {
        let (_, bl) = number("func main { block a: compute\n block b: compute\n block c: exit }");
        assert_eq!(bl.num_paths, 1);
        assert!(bl.edges.iter().all(|e| e.increment == 0));
    }

    #[test]
    fn diamond_paths_are_zero_and_one() {
        let (_, bl) = number("func main { block e: cbr b\n block a: jmp j\n block b: compute\n block j: exit }");
        assert_eq!(bl.num_paths, 2);
        let mut sums = bl.enumerate_path_sums();
        sums.sort();
        assert_eq!(sums, vec![0, 1]);
    }

    #[test]
    fn loop_with_if_else_arms_get_distinct_numbers() {
        let (cfg, bl) = number(
            "func main { block cond: cbr done if r1 >= 2\n block split: cbr right if r1 == 0\n \
             block left: jmp latch\n block right: compute\n block latch: compute r1 = r1 + 1; jmp cond\n block done: exit }",
        );
        let b = |l| cfg.block_by_label(l).unwrap();
        let (cond, split, left, right, latch) = (b("cond"), b("split"), b("left"), b("right"), b("latch"));
        let reset = bl.back_edge(latch, cond).unwrap();
        // Iteration path value from the header through one arm to the back edge.
        let iter = |arm, arm_kind, join_kind| {
            reset.reset
                + bl.increment(cond, split, EdgeKind::CondFallthrough).unwrap()
                + bl.increment(split, arm, arm_kind).unwrap()
                + bl.increment(arm, latch, join_kind).unwrap()
                + reset.end_increment
        };
        let p_left = iter(left, EdgeKind::CondFallthrough, EdgeKind::Jump);
        let p_right = iter(right, EdgeKind::CondTaken, EdgeKind::Fallthrough);
        assert_ne!(p_left, p_right);
        let sums = bl.enumerate_path_sums();
        assert!(sums.contains(&p_left) && sums.contains(&p_right));
        let mut sorted = sums.clone();
        sorted.sort();
        assert_eq!(sorted, (0..bl.num_paths).collect::<Vec<_>>());
    }

    #[test]
    fn irreducible_is_rejected() {
        let cfg = ProgramCfg::load("func main { block e: cbr b\n block a: cbr b\n block x: exit\n block b: jmp a }").unwrap();
        let dom = compute_dominators(&cfg);
        let err = ball_larus_number(&cfg, &dom, FuncId(0)).unwrap_err();
        assert!(err.to_string().starts_with("irreducible-cfg"));
    }
}
