//! End-to-end acceptance criteria. Each criterion prints one PASS or FAIL line.
//! Run with `cargo test -p rehost --test acceptance -- --nocapture`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use common::{boot, firmware, load, mini, root, spec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rehost::archspec::{lift_block, lift_raw, ImageView, LiftCache, LiftOptions};
use rehost::exec::{intrinsics, FillPolicy, Mode, RunLimits, Simulator, StopReason};
use rehost::ir::{count_ops, parse_ir, render_block, IrBlock, Opcode};
use rehost::optimizer::optimize_block;
use rehost::optimizer::rules::RULES;
use rehost::periph::SerialPort;
use rehost::symsolve::{solve, Assignment, Constraint, SolveOptions, SolverResult, SymExpr};
use rehost::vxe::{build_device, run_fuzz, run_vxe, CachePool, Device, Runtime, VxeConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

const TOY32_IMAGES: [&str; 10] = [
    "stall",
    "hello",
    "xorclear",
    "canids",
    "backdoor",
    "overflow",
    "rtos",
    "rtos_idle",
    "sender",
    "gateway",
];

fn image(name: &str) -> Vec<u8> {
    std::fs::read(root().join(format!("fw/{}.bin", name))).unwrap()
}

fn device(cfg: &VxeConfig, i: usize) -> Device {
    build_device(cfg, &cfg.devices[i], &CachePool::new()).unwrap()
}

fn random_program(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = rng.gen_range(1..24);
    (0..n)
        .flat_map(|_| {
            let op = rng.gen_range(0u8..=0x13);
            let rr: u8 = rng.gen();
            // Small REPMOV counts keep the reference interpreter fast.
            let rr = if op == 0x13 { rr & 0x77 } else { rr };
            let imm: u16 = rng.gen();
            [op, rr, (imm >> 8) as u8, imm as u8]
        })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng) -> mini::State {
    let mut regs: Vec<u8> = (0..0x100).map(|_| rng.gen()).collect();
    regs[0x38] &= 7;
    regs[0x39..0x3c].fill(0);
    mini::State::new(regs)
}

fn optimizer_equivalence_and_reduction() -> Outcome {
    let s = spec("toy32");
    let mut blocks: Vec<IrBlock> = Vec::new();
    for name in TOY32_IMAGES {
        let bytes = image(name);
        for addr in (0..bytes.len() as u64).step_by(4) {
            if let Ok((b, _, _)) = lift_raw(&s, &ImageView { base: 0, bytes: &bytes }, addr, 64) {
                if !b.instructions.is_empty() {
                    blocks.push(b);
                }
            }
        }
    }
    let from_firmware = blocks.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b7);
    while blocks.len() < 2200 {
        let code = random_program(&mut rng);
        if let Ok((b, _, _)) = lift_raw(&s, &ImageView { base: 0x1000, bytes: &code }, 0x1000, 64) {
            blocks.push(b);
        }
    }
    let mut optimized = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let (o, diag) = optimize_block(b, &s);
        ensure!(diag.is_none(), "optimizer diagnostic at 0x{:x}: {:?}", b.start, diag);
        optimized.push(o);
    }
    for i in 0..10_000 {
        let k = i % blocks.len();
        let st = random_state(&mut rng);
        let want = mini::run(&s, &blocks[k], st.clone());
        ensure!(mini::run(&s, &optimized[k], st) == want, "state {} differs on block 0x{:x}", i, blocks[k].start);
    }
    let ops = |bs: &[IrBlock]| bs.iter().map(count_ops).sum::<usize>();
    let (before, after) = (ops(&blocks), ops(&optimized));
    let (fw_before, fw_after) = (ops(&blocks[..from_firmware]), ops(&optimized[..from_firmware]));
    let pct = |b: usize, a: usize| 100.0 * (b - a) as f64 / b as f64;
    ensure!(blocks.len() >= 2000, "only {} blocks", blocks.len());
    ensure!(pct(before, after) >= 15.0, "reduction {:.1}% below 15%", pct(before, after));
    Ok(format!(
        "{} blocks ({} from firmware), 10000 states identical, ops {} -> {} ({:.1}% fewer; firmware alone {:.1}%)",
        blocks.len(),
        from_firmware,
        before,
        after,
        pct(before, after),
        pct(fw_before, fw_after)
    ))
}

fn xor_identity_rewrite() -> Outcome {
    let s = spec("toy32");
    let fw = image("xorclear");
    let (raw, _, _) = lift_raw(&s, &ImageView { base: 0x1000, bytes: &fw[..8] }, 0x1000, 64).map_err(|e| e.to_string())?;
    let (opt, diag) = optimize_block(&raw, &s);
    ensure!(diag.is_none(), "{:?}", diag);
    let text = render_block(&opt, &s.spaces);
    let golden = std::fs::read_to_string(root().join("crates/core/tests/golden/xorclear_optimized.ir")).unwrap();
    ensure!(text == golden, "render differs from golden:\n{}", text);
    let xor = &opt.instructions[1];
    ensure!(xor.ops.iter().all(|op| op.opcode == Opcode::Copy), "xor not reduced to constant copies");
    ensure!(!text.split("XOR r1, r1").nth(1).unwrap_or("").contains("u["), "temporary survives in the xor");
    Ok(format!("ops {} -> {}, golden match", count_ops(&raw), count_ops(&opt)))
}

fn check_solver_unblocks_stall() -> Outcome {
    let cfg = load("stall");
    let mut with = device(&cfg, 0);
    let main = with.symbols["main"];
    let r = with.sim.run(&RunLimits::ops(50_000).until(main)).map_err(|e| e.to_string())?;
    ensure!(r == StopReason::Address(main), "with solver: {:?}", r);
    let used = with.sim.stats.ops;
    let injected = with.check_solver().unwrap().injections.len();

    let mut plain = cfg.clone();
    plain.devices[0].observers.clear();
    let mut without = device(&plain, 0);
    let r = without.sim.run(&RunLimits::ops(1_000_000).until(main)).map_err(|e| e.to_string())?;
    ensure!(r == StopReason::OpBudget, "without solver: {:?}", r);
    let (lo, hi) = (without.symbols["wait_ready"], without.symbols["wait_lock"]);
    let pc = without.sim.pc();
    ensure!((lo..hi).contains(&pc), "without solver stuck at 0x{:x}, outside the first loop", pc);
    Ok(format!(
        "main reached after {} ops with {} injections; without solver 1M ops spent in the first loop",
        used, injected
    ))
}

fn canids_oracle() -> BTreeSet<u64> {
    let mut cfg = load("canids");
    cfg.devices[0].mode = Default::default();
    let mut d = device(&cfg, 0);
    let base = d.sim.snapshot();
    for b0 in 0..=255u8 {
        for b1 in 0..=255u8 {
            d.sim.restore(&base);
            d.sim.state_mut().write_bytes(0x9000, &[b0, b1]);
            assert_eq!(d.sim.run(&RunLimits::ops(10_000)).unwrap(), StopReason::Halted);
        }
    }
    d.write_log().unwrap().writes.iter().map(|w| w.2).collect()
}

fn flood_recovers_can_ids() -> Outcome {
    let r = run_vxe(&load("canids"))?;
    let d = &r.devices[0];
    let flood = d.flood.as_ref().ok_or("no flood report")?;
    ensure!(!flood.budget_exhausted, "flood budget exhausted");
    let found: BTreeSet<u64> = d.write_log().unwrap().writes.iter().map(|w| w.2).collect();
    ensure!(found == BTreeSet::from([0x7df, 0x18db33f1, 0x700]), "found {:x?}", found);
    let oracle = canids_oracle();
    ensure!(found == oracle, "oracle {:x?}", oracle);
    Ok(format!(
        "{{0x7df, 0x18db33f1, 0x700}} from {} paths, equal to the 65536-request oracle",
        flood.paths
    ))
}

fn fuzz_campaign(split: bool) -> Result<rehost::vxe::FuzzReport, String> {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = load("backdoor-fuzz");
    let f = cfg.fuzz.as_mut().unwrap();
    f.corpus = tmp.path().to_path_buf();
    f.split = split;
    f.max_execs = 1_000_000;
    run_fuzz(&cfg)
}

fn split_fuzzing_finds_backdoor() -> Outcome {
    let r = fuzz_campaign(true)?;
    let hit = r.reached("authenticated").ok_or_else(|| format!("goal not reached: {}", r.line()))?;
    ensure!(
        hit.input.windows(4).any(|w| w == [0xca, 0xff, 0xe0, 0x12]),
        "winning input {:02x?} lacks the key",
        hit.input
    );
    let control = fuzz_campaign(false)?;
    ensure!(
        control.reached("authenticated").is_none(),
        "control campaign without splitting also reached the goal after {} execs",
        control.execs
    );
    Ok(format!("goal after {} execs; control without splitting: {}", hit.exec, control.line()))
}

fn red_zone_past_62_bytes() -> Outcome {
    let cfg = load("overflow-fuzz");
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let lengths: Vec<usize> = (0..=80).chain([100, 128, 200]).collect();
    for &len in &lengths {
        let input: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let mut d = device(&cfg, 0);
        d.serial_mut("uart").unwrap().feed(&input);
        let r = d.sim.run(&RunLimits::ops(2_000_000)).map_err(|e| e.to_string())?;
        ensure!(r == StopReason::Halted, "len {}: {:?}", len, r);
        let hit = !d.red_zone().unwrap().hits.is_empty();
        ensure!(hit == (len > 62), "len {}: red zone hit = {}", len, hit);
    }
    Ok(format!("{} lengths from 0 to 200: hit exactly when longer than 62", lengths.len()))
}

fn rtos_switches_and_idle_isr() -> Outcome {
    let cfg = load("rtos");
    let mut d = device(&cfg, 0);
    let read = |d: &Device, a: u64| d.sim.state().read_mem(a, 4).unwrap();
    let mut last = (0, 0);
    for chunk in 0..10 {
        d.sim
            .run(&RunLimits {
                insn_budget: Some(10_000),
                ..RunLimits::default()
            })
            .map_err(|e| e.to_string())?;
        let now = (read(&d, 0x8010), read(&d, 0x8014));
        ensure!(now.0 > last.0 && now.1 > last.1, "chunk {}: counters {:?} after {:?}", chunk, now, last);
        last = now;
    }
    let switches = read(&d, 0x8004);
    ensure!(d.sim.stats.instructions == 100_000, "{} instructions", d.sim.stats.instructions);
    ensure!(switches >= 10, "{} switches", switches);

    let mut idle = cfg.clone();
    idle.devices[0].image.path = root().join("fw/rtos_idle.bin");
    idle.devices[0].observers.clear();
    idle.devices[0].budget = None;
    let mut plain = idle.clone();
    plain.devices[0].interrupts.clear();
    plain.devices[0].interrupt_window = None;
    let (mut a, mut b) = (device(&idle, 0), device(&plain, 0));
    for s in [&mut a.sim, &mut b.sim] {
        let r = s.run(&RunLimits::ops(10_000_000)).map_err(|e| e.to_string())?;
        ensure!(r == StopReason::Halted, "idle variant: {:?}", r);
    }
    let dispatched = a.sim.interrupts().unwrap().dispatched;
    ensure!(dispatched > 100, "only {} interrupts", dispatched);
    ensure!(a.sim.state().same_as(b.sim.state()), "effect-free ISR changed the final state");
    Ok(format!(
        "{} switches in 100000 instructions, counters {:?}; idle ISR ran {} times with identical state",
        switches, last, dispatched
    ))
}

fn scramble(line: &str) -> Vec<u8> {
    line.strip_suffix('\n').unwrap().bytes().map(|b| b ^ 0x20).chain(*b"\n").collect()
}

fn inter_device_pairs() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = load("demo-interdevice");
    cfg.trace.as_mut().unwrap().out = tmp.path().to_path_buf();
    let inputs = cfg.stimulus.as_ref().unwrap().inputs.clone();
    let r = run_vxe(&cfg)?;
    ensure!(!r.pairs.is_empty(), "no pairs");

    let sender = firmware("toy32", "sender");
    let (start, stop) = (sender.symbol("uart_read").unwrap(), sender.symbol("tty_write").unwrap());
    for (_, t) in &r.pairs {
        let pcs: Vec<u64> = std::fs::read_to_string(t)
            .unwrap()
            .lines()
            .map(|l| u64::from_str_radix(l.trim_start_matches("0x"), 16).unwrap())
            .collect();
        ensure!(
            pcs.first() == Some(&start) && pcs.last() == Some(&stop),
            "{} spans 0x{:x?}..0x{:x?}",
            t.display(),
            pcs.first(),
            pcs.last()
        );
    }

    // Replaying the scrambled lines into the gateway alone gives the inputs that add coverage.
    let mut solo = cfg.clone();
    solo.devices.retain(|d| d.name == "gateway");
    solo.routes.clear();
    solo.stimulus = None;
    solo.trace = None;
    let mut rt = Runtime::start(&solo)?;
    rt.settle(1000);
    rt.exec("gateway", |d| d.coverage_mut().unwrap().take_fresh())?;
    let mut expected = Vec::new();
    for input in &inputs {
        let bytes = scramble(input);
        rt.exec("gateway", move |d| d.serial_mut("link").unwrap().feed(&bytes))?;
        rt.settle(1000);
        if !rt.exec("gateway", |d| d.coverage_mut().unwrap().take_fresh())?.is_empty() {
            expected.push(input.clone());
        }
    }
    let got: Vec<String> = r.pairs.iter().map(|(i, _)| String::from_utf8(std::fs::read(i).unwrap()).unwrap()).collect();
    ensure!(got == expected, "pairs for {:?}, new gateway coverage for {:?}", got, expected);
    Ok(format!(
        "{} pairs from {} inputs, all on new gateway coverage, traces span uart_read..tty_write",
        got.len(),
        inputs.len()
    ))
}

const OVERLAP: &str = "block 0x0 toy32 v1\ninsn 0x0 4 \"T\"\n  r[0x0:1] = COPY #0x5:1\n  r[0x4:4] = COPY r[0x0:4]\n  r[0x0:1] = COPY #0x7:1\n";

/// Drops a write when the identical varnode is written again before any identical read.
fn overlap_blind_dce(block: &IrBlock) -> IrBlock {
    let mut out = block.clone();
    for insn in &mut out.instructions {
        let ops = insn.ops.clone();
        let keep: Vec<bool> = ops
            .iter()
            .enumerate()
            .map(|(i, op)| {
                let Some(o) = op.output else { return true };
                for later in &ops[i + 1..] {
                    if later.inputs.contains(&o) {
                        return true;
                    }
                    if later.output == Some(o) {
                        return false;
                    }
                }
                true
            })
            .collect();
        let mut it = keep.into_iter();
        insn.ops.retain(|_| it.next().unwrap());
    }
    out
}

fn overlap_aware_ssa() -> Outcome {
    let s = spec("toy32");
    let b = parse_ir(OVERLAP, &s.spaces).map_err(|e| e.to_string())?;
    let init = mini::State::new((0..0x100).map(|i| i as u8 ^ 0x5a).collect());
    let want = mini::run(&s, &b, init.clone());
    let expect_r1 = u32::from_le_bytes([5, 0x5a ^ 1, 0x5a ^ 2, 0x5a ^ 3]);
    ensure!(want.regs[4..8] == expect_r1.to_le_bytes(), "reference final value {:x?}", &want.regs[4..8]);
    let (opt, diag) = optimize_block(&b, &s);
    ensure!(diag.is_none(), "{:?}", diag);
    ensure!(mini::run(&s, &opt, init.clone()) == want, "optimized block computes a different value");
    ensure!(
        opt.instructions[0]
            .ops
            .iter()
            .any(|op| op.output.map(|o| (o.offset, o.size)) == Some((0, 1)) && op.inputs[0].offset == 5),
        "sub-register write removed"
    );
    let naive = overlap_blind_dce(&b);
    ensure!(mini::run(&s, &naive, init) != want, "overlap-blind DCE did not corrupt the fixture");
    Ok(format!(
        "R1 = 0x{:08x} kept through DCE ({} ops); overlap-blind DCE corrupts it ({} ops)",
        expect_r1,
        count_ops(&opt),
        count_ops(&naive)
    ))
}

fn lift_all(s: &rehost::archspec::ProcessorSpec, cache: &LiftCache) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for name in TOY32_IMAGES {
        let bytes = image(name);
        let view = ImageView { base: 0, bytes: &bytes };
        for addr in (0..bytes.len() as u64).step_by(4) {
            let opts = LiftOptions {
                optimize: true,
                ..LiftOptions::default()
            };
            if let Ok(l) = lift_block(s, &view, addr, opts, Some(cache)) {
                out.push(render_block(&l.block, &s.spaces));
            }
        }
    }
    Ok(out)
}

fn disk_files(dir: &std::path::Path) -> BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in std::fs::read_dir(dir).unwrap() {
        let sub = sub.unwrap().path();
        if sub.is_dir() {
            for f in std::fs::read_dir(&sub).unwrap() {
                let f = f.unwrap().path();
                out.insert(f.clone(), std::fs::read(&f).unwrap());
            }
        }
    }
    out
}

fn cache_amortization() -> Outcome {
    let s = spec("toy32");
    let tmp = tempfile::tempdir().unwrap();
    let cache = LiftCache::with_dir(tmp.path());
    let first = lift_all(&s, &cache)?;
    let cold = cache.stats();
    ensure!(cold.saturation_calls > 0, "first pass never optimized");
    cache.reset_stats();
    let second = lift_all(&s, &cache)?;
    let warm = cache.stats();
    ensure!(warm.saturation_calls == 0 && warm.misses == 0, "second pass: {:?}", warm);
    ensure!(first == second, "second pass renders differently");

    let files = disk_files(tmp.path());
    let reopened = LiftCache::with_dir(tmp.path());
    let third = lift_all(&s, &reopened)?;
    let disk = reopened.stats();
    ensure!(disk.saturation_calls == 0 && disk.misses == 0, "reload from disk: {:?}", disk);
    ensure!(third == first, "disk round trip changed a block");
    ensure!(disk_files(tmp.path()) == files, "disk entries were rewritten");
    Ok(format!(
        "{} blocks: cold {} saturation calls, warm 0, reload from {} disk entries 0",
        first.len(),
        cold.saturation_calls,
        files.len()
    ))
}

fn random_constraint(rng: &mut ChaCha8Rng) -> Constraint {
    let bins = [
        Opcode::IntAdd,
        Opcode::IntSub,
        Opcode::IntXor,
        Opcode::IntAnd,
        Opcode::IntOr,
        Opcode::IntMul,
        Opcode::IntLeft,
        Opcode::IntRight,
    ];
    let rels = [Opcode::IntEqual, Opcode::IntNotEqual, Opcode::IntLess, Opcode::IntSLess];
    let size = [1u8, 2, 4][rng.gen_range(0..3)];
    let m = if size == 4 { u32::MAX as u64 } else { (1u64 << (8 * size)) - 1 };
    let mut e = SymExpr::var(rng.gen_range(0..2), size);
    for _ in 0..rng.gen_range(1..4) {
        let other = if rng.gen_bool(0.3) {
            SymExpr::var(rng.gen_range(0..2), size)
        } else {
            SymExpr::constant(rng.gen::<u64>() & m & if rng.gen() { 0xff } else { m }, size)
        };
        e = SymExpr::apply(bins[rng.gen_range(0..bins.len())], size, vec![e, other]);
    }
    let rel = SymExpr::apply(rels[rng.gen_range(0..rels.len())], 1, vec![e, SymExpr::constant(rng.gen::<u64>() & m, size)]);
    Constraint::truth(rel, rng.gen())
}

fn concolic_constraints() -> Vec<Vec<Constraint>> {
    let (mut sim, _) = boot(
        "canids",
        Mode::Concolic {
            regions: vec![(0x9000, 0x9004)],
        },
    );
    sim.add_device(Box::new(rehost::periph::FifoStream::new("can", 0xfff83000, 31))).unwrap();
    sim.run(&RunLimits::ops(100_000)).unwrap();
    let c = sim.concolic().unwrap();
    (0..c.path.len()).map(|i| c.negate(i)).collect()
}

fn soundness() -> Outcome {
    let mut rules = 0;
    for rule in RULES {
        ensure!(rule.vars() == 1, "{} has {} variables", rule.name, rule.vars());
        for x in 0..=0xffu64 {
            if let Some((l, r)) = rule.counterexample(&[x], 1) {
                return Err(format!("{} fails at x=0x{:x}: 0x{:x} vs 0x{:x}", rule.name, x, l, r));
            }
        }
        rules += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sets: Vec<Vec<Constraint>> = (0..1000)
        .map(|_| (0..rng.gen_range(1..3)).map(|_| random_constraint(&mut rng)).collect())
        .collect();
    let from_runs = concolic_constraints();
    ensure!(!from_runs.is_empty(), "no path constraints from the concolic run");
    sets.extend(from_runs.iter().cloned());
    let mut tally = [0usize; 3];
    for cs in &sets {
        match solve(cs, &SolveOptions::default()) {
            SolverResult::Sat(m) => {
                let full: Assignment = cs
                    .iter()
                    .flat_map(|c| c.expr.vars())
                    .map(|(id, _)| (id, m.get(&id).copied().unwrap_or(0)))
                    .collect();
                ensure!(cs.iter().all(|c| c.holds(&full) == Ok(true)), "model {:?} fails {:?}", m, cs);
                tally[0] += 1;
            }
            SolverResult::Unsat => tally[1] += 1,
            SolverResult::Unknown(_) => tally[2] += 1,
        }
    }
    ensure!(tally[0] > 100, "only {} sat results", tally[0]);

    let mut floods = Vec::new();
    for name in TOY32_IMAGES {
        let (mut sim, _) = boot(
            name,
            Mode::Flood {
                k: 3,
                op_budget: 2_000_000,
                fill: FillPolicy::Zeros,
            },
        );
        sim.add_device(Box::new(SerialPort::new("uart", 0xfff80000))).unwrap();
        let r = sim.flood_explore(&[0]).map_err(|e| format!("{}: {}", name, e))?;
        ensure!(r.max_visits <= 3 && r.paths > 0, "{}: {:?}", name, r);
        floods.push(format!("{}:{}", name, r.paths));
    }
    let dpp = firmware("toy16dpp", "dpp");
    let mut sim = Simulator::new(
        spec("toy16dpp"),
        Arc::new(LiftCache::in_memory()),
        Mode::Flood {
            k: 3,
            op_budget: 2_000_000,
            fill: FillPolicy::Zeros,
        },
    );
    sim.load_image(0, &dpp.bytes);
    sim.register_intrinsic("dppov", intrinsics::page_override(14, 1));
    let r = sim.flood_explore(&[0])?;
    ensure!(r.max_visits <= 3 && r.paths > 0, "dpp: {:?}", r);
    Ok(format!(
        "{} rules exhaustive at width 8; {} constraint sets ({} from concolic runs): {} sat all valid, {} unsat, {} unknown; flood terminates on 11 images",
        rules,
        sets.len(),
        from_runs.len(),
        tally[0],
        tally[1],
        tally[2]
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("optimizer equivalence and reduction", optimizer_equivalence_and_reduction),
        ("xor identity rewrite matches golden", xor_identity_rewrite),
        ("check solver unblocks polling loops", check_solver_unblocks_stall),
        ("flood mode recovers CAN identifiers", flood_recovers_can_ids),
        ("comparison splitting finds the backdoor", split_fuzzing_finds_backdoor),
        ("red zone detects long inputs", red_zone_past_62_bytes),
        ("RTOS context switches and idle ISR", rtos_switches_and_idle_isr),
        ("inter-device input/trace pairs", inter_device_pairs),
        ("overlap-aware SSA keeps partial writes", overlap_aware_ssa),
        ("lift cache amortization", cache_amortization),
        ("rule, solver and flood soundness", soundness),
    ];
    let results: Vec<(Outcome, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
                        Err(p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panicked".into()))
                    });
                    (r, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = Vec::new();
    for (i, ((name, _), (r, secs))) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {} ({:.1}s): {}", i + 1, name, secs, detail),
            Err(why) => {
                println!("FAIL {:>2} {} ({:.1}s): {}", i + 1, name, secs, why);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {:?}", failed);
}
