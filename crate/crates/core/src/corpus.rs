//! Bundled programs and program generators.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::Inputs;
use crate::ir::Reg;

/// Inner trip count of the crc32 replica at full scale.
pub const CRC32_INNER: u32 = 1024;
/// Outer repetitions used by the reference crc32 run.
pub const CRC32_RPT: u32 = 4250;
/// Micro-steps per millilitre of the syringe replica.
pub const USTEPS_PER_ML: u32 = 6826;

/// crc32-shaped benchmark: `rpt` (in r0) repetitions of a call to a routine looping
/// `inner` times. Addresses are pinned so the instrumented blocks sit at
/// 0x10000495 (outer body), 0x10000441 (inner body) and 0x10000465 (inner exit).
pub fn crc32_source(inner: u32) -> String {
    format!(
        "# crc32 benchmark replica; r0 = repetitions\n\
         entry benchmark_body\n\
         \n\
         func crc32pseudo {{\n\
         \x20 block inner_entry @0x10000431: set r1 = 0; compute r2 = 0xffffffff\n\
         \x20 block inner_cond @0x10000439: cbr inner_exit if r1 >= {inner}\n\
         \x20 block inner_body @0x10000441: compute r2 = r2 ^ r1; compute r1 = r1 + 1; jmp inner_cond\n\
         \x20 block inner_exit @0x10000465: compute r2 = r2 ^ 0xffffffff; ret\n\
         }}\n\
         \n\
         func benchmark_body {{\n\
         \x20 block outer_entry @0x10000475: set r5 = 0\n\
         \x20 block outer_cond @0x10000481: cbr outer_done if r5 >= r0\n\
         \x20 block outer_body @0x10000495: compute r6 = 0; call crc32pseudo\n\
         \x20 block outer_latch @0x1000049d: compute r7 = r2; compute r5 = r5 + 1; jmp outer_cond\n\
         \x20 block outer_done @0x100004a9: exit\n\
         }}\n"
    )
}

pub fn crc32_inputs(rpt: u32) -> Inputs {
    Inputs::from([(Reg(0), rpt)])
}

/// Syringe pump: r0 = bolus in microlitres, r3 = direction character (`+` or `-`).
/// The loop body `inner_body` runs `r0 * 6826 / 1000` times.
pub fn syringe_source() -> String {
    format!(
        "# syringe pump bolus loop; r0 = bolus (uL), r3 = '+' (43) or '-' (45)\n\
         func main {{\n\
         \x20 block setup: compute r2 = r0 * {USTEPS_PER_ML}; compute r2 = r2 / 1000; set r1 = 0\n\
         \x20 block step_cond: cbr done if r1 >= r2\n\
         \x20 block inner_body: cbr pull_dir if r3 != 43\n\
         \x20 block push: call dispense\n\
         \x20 block push_next: compute; jmp latch\n\
         \x20 block pull_dir: cbr latch if r3 != 45\n\
         \x20 block pull: call withdraw\n\
         \x20 block latch: compute r1 = r1 + 1; jmp step_cond\n\
         \x20 block done: exit\n\
         }}\n\
         \n\
         func dispense {{\n\
         \x20 block d: compute r6 = r6 + 1; ret\n\
         }}\n\
         \n\
         func withdraw {{\n\
         \x20 block w: compute r6 = r6 - 1; ret\n\
         }}\n"
    )
}

pub fn syringe_inputs(bolus_ul: u32, direction: char) -> Inputs {
    Inputs::from([(Reg(0), bolus_ul), (Reg(3), direction as u32)])
}

/// Function-pointer dispatch: r0 selects `op_add` (0) or `op_sub` (nonzero).
pub fn dispatch_source() -> String {
    "# dispatch through a function pointer; r0 selects the operation\n\
     func main {\n\
     \x20 block start: cbr pick_sub if r0 != 0\n\
     \x20 block pick_add: set r4 = @op_add; jmp go\n\
     \x20 block pick_sub: set r4 = @op_sub\n\
     \x20 block go: icall r4\n\
     \x20 block after: compute r5 = r1; exit\n\
     }\n\
     \n\
     func op_add {\n\
     \x20 block a: compute r1 = r1 + r2; ret\n\
     }\n\
     \n\
     func op_sub {\n\
     \x20 block s: compute r1 = r1 - r2; ret\n\
     }\n"
        .to_string()
}

/// Named bundled programs.
pub fn bundled() -> Vec<(&'static str, String)> {
    vec![("crc32", crc32_source(CRC32_INNER)), ("syringe", syringe_source()), ("dispatch", dispatch_source())]
}

/// Resolves a bundled program or generator instance by name, with its default inputs:
/// `crc32`, `syringe`, `dispatch`, `unique-U` (U instrumented blocks, about 4380 events),
/// `scaling-K` and `alternating-K` (K iterations).
pub fn builtin(name: &str) -> Option<(String, Inputs)> {
    let (base, arg) = match name.split_once('-') {
        Some((b, a)) => (b, Some(a.parse::<u32>().ok()?)),
        None => (name, None),
    };
    Some(match (base, arg) {
        ("crc32", None) => (crc32_source(CRC32_INNER), crc32_inputs(10)),
        ("syringe", None) => (syringe_source(), syringe_inputs(10, '+')),
        ("dispatch", None) => (dispatch_source(), Inputs::from([(Reg(0), 0), (Reg(1), 5), (Reg(2), 3)])),
        ("unique", Some(0)) => (unique_blocks_program(2, 0), Inputs::new()),
        ("unique", Some(u)) => (unique_blocks_program(u as usize - 1, 4380 / u), Inputs::new()),
        ("scaling", Some(k)) => (loop_scaling_program(k), Inputs::new()),
        ("alternating", Some(k)) => (alternating_loop_program(k), Inputs::new()),
        _ => return None,
    })
}

/// A loop running `iterations` times whose body passes `d` always-taken branches, so
/// exactly `1 + d` instrumented blocks execute (none when `iterations` is 0).
pub fn unique_blocks_program(d: usize, iterations: u32) -> String {
    let mut s = String::from("func main {\n  block init: set r1 = 0; set r9 = 0\n");
    let _ = writeln!(s, "  block cond: cbr done if r1 >= {iterations}");
    let mut current = "body".to_string();
    for i in 0..d {
        let _ = writeln!(s, "  block {current}: compute; cbr t{i} if r9 == 0");
        let _ = writeln!(s, "  block f{i}: compute; jmp t{i}");
        current = format!("t{i}");
    }
    let _ = writeln!(s, "  block {current}: compute r1 = r1 + 1; jmp cond");
    s.push_str("  block done: exit\n}\n");
    s
}

/// Loop of `k` iterations, each passing 7 always-taken branches and making 2 indirect
/// calls to one function. Nine instrumented blocks execute regardless of `k`.
pub fn loop_scaling_program(k: u32) -> String {
    let mut s = String::from("func main {\n  block init: set r1 = 0; set r9 = 0\n");
    let _ = writeln!(s, "  block cond: cbr done if r1 >= {k}");
    let mut current = "body".to_string();
    for i in 0..7 {
        let _ = writeln!(s, "  block {current}: compute; cbr t{i} if r9 == 0");
        let _ = writeln!(s, "  block f{i}: compute; jmp t{i}");
        current = format!("t{i}");
    }
    let _ = writeln!(s, "  block {current}: set r13 = @work; icall r13");
    s.push_str("  block again: compute; set r13 = @work; icall r13\n");
    s.push_str("  block latch: compute; compute r1 = r1 + 1; jmp cond\n");
    s.push_str("  block done: exit\n}\n\nfunc work {\n  block w: compute r12 = r12 + 1; ret\n}\n");
    s
}

/// Loop of `iterations` whose body alternates between two paths on the counter's parity.
pub fn alternating_loop_program(iterations: u32) -> String {
    format!(
        "func main {{\n\
         \x20 block init: set r1 = 0\n\
         \x20 block cond: cbr done if r1 >= {iterations}\n\
         \x20 block body: compute r8 = r1 & 1; cbr odd if r8 != 0\n\
         \x20 block even: compute; jmp latch\n\
         \x20 block odd: compute\n\
         \x20 block latch: compute r1 = r1 + 1; jmp cond\n\
         \x20 block done: exit\n\
         }}\n"
    )
}

/// Shape limits for [`random_program`].
#[derive(Clone, Debug)]
pub struct RandomConfig {
    pub max_blocks: usize,
    pub max_functions: usize,
    pub max_loop_bound: u32,
    pub max_depth: usize,
    pub indirect: bool,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig { max_blocks: 12, max_functions: 3, max_loop_bound: 4, max_depth: 2, indirect: true }
    }
}

/// A generated program with labels of interesting blocks.
#[derive(Clone, Debug)]
pub struct RandomProgram {
    pub source: String,
    /// First block of each loop body (the fall-through of the loop's exit test).
    pub loop_bodies: Vec<String>,
    /// Blocks ending in a two-way conditional branch.
    pub branch_blocks: Vec<String>,
    pub blocks: usize,
}

#[derive(Clone, Debug)]
enum Stmt {
    Compute,
    If { cond: String, then: Vec<Stmt>, other: Vec<Stmt> },
    Loop { counter: u8, bound: u32, body: Vec<Stmt> },
    Call(usize),
    ICall(usize),
    Goto,
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    cfg: &'a RandomConfig,
    next_counter: u8,
    funcs: usize,
}

const CMPS: [&str; 6] = ["==", "!=", "<", "<=", ">", ">="];

impl Gen<'_> {
    fn stmts(&mut self, func: usize, depth: usize, len: usize) -> Vec<Stmt> {
        (0..len).map(|_| self.stmt(func, depth)).collect()
    }

    fn stmt(&mut self, func: usize, depth: usize) -> Stmt {
        let callees = func + 1..self.funcs;
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=24 if depth < self.cfg.max_depth => {
                let reg = self.rng.gen_range(0..4);
                let op = CMPS.choose(&mut self.rng).unwrap();
                let k = self.rng.gen_range(0..8);
                let cond = format!("r{reg} {op} {k}");
                let n = self.rng.gen_range(1..=2);
                let then = self.stmts(func, depth + 1, n);
                let m = self.rng.gen_range(0..=1);
                let other = self.stmts(func, depth + 1, m);
                Stmt::If { cond, then, other }
            }
            25..=44 if depth < self.cfg.max_depth && self.next_counter <= 9 => {
                let counter = self.next_counter;
                self.next_counter += 1;
                let bound = self.rng.gen_range(0..=self.cfg.max_loop_bound);
                let n = self.rng.gen_range(1..=2);
                Stmt::Loop { counter, bound, body: self.stmts(func, depth + 1, n) }
            }
            45..=59 if !callees.is_empty() => Stmt::Call(self.rng.gen_range(callees)),
            60..=69 if !callees.is_empty() && self.cfg.indirect => Stmt::ICall(self.rng.gen_range(callees)),
            70..=74 if self.cfg.indirect => Stmt::Goto,
            _ => Stmt::Compute,
        }
    }
}

struct Emitter<'a> {
    out: String,
    names: &'a [String],
    cur: Vec<String>,
    cur_label: String,
    next_label: usize,
    blocks: usize,
    loop_bodies: Vec<String>,
    branch_blocks: Vec<String>,
}

impl Emitter<'_> {
    fn fresh(&mut self) -> String {
        self.next_label += 1;
        format!("L{}", self.next_label)
    }

    fn close(&mut self, next: String) {
        let _ = writeln!(self.out, "  block {}: {}", self.cur_label, self.cur.join("; "));
        self.blocks += 1;
        self.cur.clear();
        self.cur_label = next;
    }

    fn seq(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Compute => self.cur.push("compute r12 = r12 + 1".into()),
            Stmt::If { cond, then, other } => {
                let join = self.fresh();
                self.branch_blocks.push(self.cur_label.clone());
                if other.is_empty() {
                    self.cur.push(format!("cbr {join} if {cond}"));
                    let body = self.fresh();
                    self.close(body);
                    self.cur.push("compute".into());
                    self.seq(then);
                } else {
                    let then_label = self.fresh();
                    self.cur.push(format!("cbr {then_label} if {cond}"));
                    let else_label = self.fresh();
                    self.close(else_label);
                    self.cur.push("compute".into());
                    self.seq(other);
                    self.cur.push(format!("jmp {join}"));
                    self.close(then_label);
                    self.cur.push("compute".into());
                    self.seq(then);
                }
                self.close(join);
                self.cur.push("compute".into());
            }
            Stmt::Loop { counter, bound, body } => {
                self.cur.push(format!("set r{counter} = 0"));
                let header = self.fresh();
                let exit = self.fresh();
                self.close(header.clone());
                self.cur.push(format!("cbr {exit} if r{counter} >= {bound}"));
                self.branch_blocks.push(header.clone());
                let body_label = self.fresh();
                self.loop_bodies.push(body_label.clone());
                self.close(body_label);
                self.cur.push("compute".into());
                self.seq(body);
                self.cur.push(format!("compute r{counter} = r{counter} + 1"));
                self.cur.push(format!("jmp {header}"));
                self.close(exit);
                self.cur.push("compute".into());
            }
            Stmt::Call(f) => {
                self.cur.push(format!("call {}", self.names[*f]));
                let next = self.fresh();
                self.close(next);
                self.cur.push("compute".into());
                self.cur.push("compute".into());
            }
            Stmt::ICall(f) => {
                self.cur.push(format!("set r13 = @{}", self.names[*f]));
                self.cur.push("icall r13".into());
                let next = self.fresh();
                self.close(next);
                self.cur.push("compute".into());
                self.cur.push("compute".into());
            }
            Stmt::Goto => {
                let target = self.fresh();
                self.cur.push(format!("set r13 = @{target}"));
                self.cur.push("ijmp r13".into());
                self.close(target);
                self.cur.push("compute".into());
            }
        }
    }
}

/// Deterministic structured program: nested ifs on inputs r0..r3, counted loops
/// (counters r4..r9, bounds up to `max_loop_bound`), direct and indirect calls to
/// later functions only, and computed gotos. Every block starts with a data-free
/// `compute` except loop headers, and each call's return site holds at least two
/// instructions.
pub fn random_program(seed: u64, cfg: &RandomConfig) -> RandomProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let funcs = rng.gen_range(1..=cfg.max_functions.max(1));
        let mut gen = Gen { rng: ChaCha8Rng::seed_from_u64(rng.gen()), cfg, next_counter: 4, funcs };
        let bodies: Vec<Vec<Stmt>> = (0..funcs)
            .map(|f| {
                let n = gen.rng.gen_range(1..=3);
                gen.stmts(f, 0, n)
            })
            .collect();
        let names: Vec<String> = (0..funcs).map(|f| if f == 0 { "main".to_string() } else { format!("f{f}") }).collect();
        let mut em = Emitter {
            out: String::new(),
            names: &names,
            cur: Vec::new(),
            cur_label: String::new(),
            next_label: 0,
            blocks: 0,
            loop_bodies: Vec::new(),
            branch_blocks: Vec::new(),
        };
        for (f, body) in bodies.iter().enumerate() {
            let _ = writeln!(em.out, "func {} {{", names[f]);
            em.cur_label = em.fresh();
            em.cur.push("compute".into());
            em.seq(body);
            em.cur.push(if f == 0 { "exit".into() } else { "ret".into() });
            em.close(String::new());
            em.out.push_str("}\n");
        }
        if em.blocks <= cfg.max_blocks {
            return RandomProgram { source: em.out, loop_bodies: em.loop_bodies, branch_blocks: em.branch_blocks, blocks: em.blocks };
        }
    }
}

/// Inputs for r0..r3 in the range the generated conditions compare against.
pub fn random_inputs(seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..4).map(|r| (Reg(r), rng.gen_range(0..8))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run, NoMonitor, RunOptions};
    use crate::ir::ProgramCfg;

    #[test]
    fn bundled_programs_load() {
        for (name, text) in bundled() {
            ProgramCfg::load(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn crc32_pinned_layout() {
        let cfg = ProgramCfg::load(&crc32_source(CRC32_INNER)).unwrap();
        for (label, addr) in [("inner_body", 0x1000_0441), ("inner_exit", 0x1000_0465), ("outer_body", 0x1000_0495)] {
            assert_eq!(cfg.block(cfg.block_by_label(label).unwrap()).start_addr, addr);
        }
    }

    #[test]
    fn syringe_step_counts() {
        assert_eq!(10 * USTEPS_PER_ML / 1000, 68);
        assert_eq!(11 * USTEPS_PER_ML / 1000, 75);
        let cfg = ProgramCfg::load(&syringe_source()).unwrap();
        let out = run(&cfg, &syringe_inputs(10, '+'), &RunOptions::default(), NoMonitor);
        assert_eq!(out.fault, None);
        assert_eq!(out.regs[6], 68);
    }

    #[test]
    fn random_programs_are_valid_and_deterministic() {
        let rc = RandomConfig::default();
        for seed in 0..200 {
            let p = random_program(seed, &rc);
            assert!(p.blocks <= 12);
            assert_eq!(p.source, random_program(seed, &rc).source);
            let cfg = ProgramCfg::load(&p.source).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", p.source));
            assert_eq!(cfg.blocks.len(), p.blocks);
            let out = run(&cfg, &random_inputs(seed), &RunOptions::default(), NoMonitor);
            assert_eq!(out.fault, None, "seed {seed}");
        }
    }

    #[test]
    fn builtin_names() {
        for name in ["crc32", "syringe", "dispatch", "unique-0", "unique-3", "unique-73", "scaling-10", "alternating-5"] {
            let (text, _) = builtin(name).unwrap_or_else(|| panic!("{name}"));
            ProgramCfg::load(&text).unwrap();
        }
        assert!(builtin("unique").is_none());
        assert!(builtin("crc32-4").is_none());
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn generator_event_totals() {
        for (d, n) in [(2usize, 1460u32), (72, 60)] {
            let cfg = ProgramCfg::load(&unique_blocks_program(d, n)).unwrap();
            let out = run(&cfg, &Inputs::new(), &RunOptions::default(), NoMonitor);
            assert_eq!(out.log.l(), 4381);
        }
    }
}
