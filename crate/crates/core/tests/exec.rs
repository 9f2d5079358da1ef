use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use rehost::archspec::{LiftCache, ProcessorSpec};
use rehost::asm::assemble;
use rehost::exec::{intrinsics, ExecError, FillPolicy, Mode, RunLimits, Simulator, StopReason};
use rehost::observe::{Event, EventKind, Filter, FnObserver, Response};
use rehost::symsolve::{eval, SolveOptions, SolverResult};

fn spec(name: &str) -> Arc<ProcessorSpec> {
    let text = std::fs::read_to_string(format!("{}/../../specs/{}.spec", env!("CARGO_MANIFEST_DIR"), name)).unwrap();
    Arc::new(ProcessorSpec::parse(&text).unwrap())
}

fn sim_with(name: &str, src: &str, mode: Mode) -> (Simulator, rehost::asm::Assembly) {
    let s = spec(name);
    let a = assemble(&s, src, 0).unwrap();
    let mut sim = Simulator::new(s, Arc::new(LiftCache::in_memory()), mode);
    sim.load_image(0, &a.bytes);
    (sim, a)
}

fn toy32(src: &str) -> (Simulator, rehost::asm::Assembly) {
    sim_with("toy32", src, Mode::Concrete)
}

#[test]
fn arithmetic_and_halt() {
    let (mut sim, _) = toy32("MOVI r1, 7\nMOVI r2, 5\nADD r1, r2\nHALT\n");
    assert_eq!(sim.run(&RunLimits::default()).unwrap(), StopReason::Halted);
    assert_eq!(sim.reg("R1"), Some(12));
    assert_eq!(sim.reg("ZF"), Some(0));
    assert_eq!(sim.stats.instructions, 4);
}

#[test]
fn jump_sets_pc() {
    let (mut sim, _) = toy32("JMP 0x200\n");
    sim.map(0x200, 4);
    sim.step_instruction().unwrap();
    assert_eq!(sim.pc(), 0x200);
}

#[test]
fn copy_of_zero_clears_carry_byte() {
    let (mut sim, _) = toy32("MOVI r1, 0xffff\nMOVI r2, 1\nSHL r2, r1\nXOR r1, r1\nHALT\n");
    sim.set_reg("CF", 1).unwrap();
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("CF"), Some(0));
    assert_eq!(sim.reg("R1"), Some(0));
    assert_eq!(sim.reg("ZF"), Some(1));
}

#[test]
fn repmov_runs_local_loop_in_one_step() {
    let src = "MOVI r1, 0x100\nMOVI r2, 0x200\nMOVI r14, 3\nREPMOV r2, r1\nHALT\n";
    let (mut sim, _) = toy32(src);
    sim.map(0x100, 0x200);
    sim.state_mut().write_bytes(0x100, &[0xaa, 0xbb, 0xcc, 0xdd]);
    let steps = Arc::new(Mutex::new(Vec::new()));
    let s2 = steps.clone();
    sim.observe(
        Filter::kinds(&[EventKind::ArchitecturalStep]),
        Box::new(FnObserver(move |e: &Event| {
            s2.lock().unwrap().push(e.pc());
            Response::Continue
        })),
    );
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.state().read_bytes(0x200, 4).unwrap(), vec![0xaa, 0xbb, 0xcc, 0]);
    assert_eq!(sim.reg("R14"), Some(0));
    let steps = steps.lock().unwrap();
    assert_eq!(steps.iter().filter(|&&p| p == 12).count(), 1);
}

#[test]
fn taken_branch_fires_cbranch_event() {
    let src = "MOVI r1, 4\nMOVI r2, 4\nCMP r1, r2\nBEQ target\nHALT\ntarget: MOVI r3, 1\nHALT\n";
    let (mut sim, a) = toy32(src);
    let seen = Arc::new(Mutex::new(Vec::new()));
    let s2 = seen.clone();
    sim.observe(
        Filter::kinds(&[EventKind::CBranch]),
        Box::new(FnObserver(move |e: &Event| {
            if let Event::CBranch { condition, taken, target, .. } = *e {
                s2.lock().unwrap().push((condition, taken, target));
            }
            Response::Continue
        })),
    );
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R3"), Some(1));
    assert_eq!(*seen.lock().unwrap(), vec![(1, true, a.symbol("target").unwrap())]);
}

#[test]
fn unmapped_load_concrete_faults_with_address() {
    let (mut sim, _) = toy32("MOVI r1, 0x5000\nLD r2, [r1, 4]\nHALT\n");
    let err = sim.run(&RunLimits::default()).unwrap_err();
    assert_eq!(
        err,
        ExecError::Unmapped {
            pc: 4,
            addr: 0x5004,
            write: false
        }
    );
}

#[test]
fn unmapped_load_micro_zero_fill_maps_page() {
    let (mut sim, _) = sim_with(
        "toy32",
        "MOVI r1, 0x5000\nLD r2, [r1, 4]\nLD r3, [r1, 4]\nHALT\n",
        Mode::Micro(FillPolicy::Zeros),
    );
    sim.set_reg("R2", 9).unwrap();
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R2"), Some(0));
    assert_eq!(sim.reg("R3"), Some(0));
    assert!(sim.state().is_mapped(0x5004, 4));
}

#[test]
fn random_fill_is_reproducible() {
    let src = "MOVI r1, 0x7000\nLD r2, [r1, 0]\nLD r3, [r1, 0]\nHALT\n";
    let run = |seed| {
        let (mut sim, _) = sim_with("toy32", src, Mode::Micro(FillPolicy::Random(seed)));
        sim.run(&RunLimits::default()).unwrap();
        (sim.reg("R2").unwrap(), sim.reg("R3").unwrap())
    };
    let (a, b) = run(11);
    assert_eq!(a, b);
    assert_eq!(run(11), (a, b));
}

#[test]
fn call_and_return() {
    let src = "CALL f\nMOVI r2, 2\nHALT\nf: MOVI r1, 1\nRET\n";
    let (mut sim, _) = toy32(src);
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!((sim.reg("R1"), sim.reg("R2"), sim.reg("R15")), (Some(1), Some(2), Some(4)));
}

#[test]
fn stop_address_and_budgets() {
    let src = "loop: MOVI r1, 1\nJMP loop\n";
    let (mut sim, _) = toy32(src);
    assert_eq!(sim.run(&RunLimits::default().until(4)).unwrap(), StopReason::Address(4));
    assert_eq!(sim.run(&RunLimits::ops(100)).unwrap(), StopReason::OpBudget);
    let limits = RunLimits {
        insn_budget: Some(10),
        ..RunLimits::default()
    };
    assert_eq!(sim.run(&limits).unwrap(), StopReason::InstructionBudget);
}

#[test]
fn forced_flip_changes_only_control_flow() {
    let src = "MOVI r1, 1\nMOVI r2, 2\nCMP r1, r2\nBEQ eq\nMOVI r3, 0xa\nHALT\neq: MOVI r3, 0xb\nHALT\n";
    let flips = BTreeSet::from([12u64]);
    let (mut sim, _) = sim_with("toy32", src, Mode::Forced { flips });
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R3"), Some(0xb));
    assert_eq!(sim.reg("ZF"), Some(0));
}

#[test]
fn snapshot_restore_reproduces_trace() {
    let src = "MOVI r1, 0\nMOVI r2, 1\nloop: ADD r1, r2\nMOVI r3, 50\nCMP r1, r3\nBNE loop\nHALT\n";
    let (mut sim, _) = toy32(src);
    sim.run(&RunLimits {
        insn_budget: Some(7),
        ..RunLimits::default()
    })
    .unwrap();
    let snap = sim.snapshot();
    let trace = |sim: &mut Simulator| {
        let mut pcs = Vec::new();
        for _ in 0..40 {
            pcs.push(sim.pc());
            sim.step_instruction().unwrap();
        }
        (pcs, sim.state().digest())
    };
    let first = trace(&mut sim);
    sim.restore(&snap);
    assert_eq!(trace(&mut sim), first);
}

#[test]
fn fork_children_do_not_share_state() {
    let (mut sim, _) = toy32("MOVI r1, 1\nHALT\n");
    sim.map(0x1000, 0x100);
    let mut children: Vec<Simulator> = (0..100).map(|_| sim.fork()).collect();
    for (i, c) in children.iter_mut().enumerate() {
        c.state_mut().write_mem(0x1000, 4, i as u64 + 1);
        c.run(&RunLimits::default()).unwrap();
    }
    assert_eq!(sim.state().read_mem(0x1000, 4), Some(0));
    assert_eq!(sim.reg("R1"), Some(0));
    assert_eq!(children[42].state().read_mem(0x1000, 4), Some(43));
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R1"), Some(1));
}

#[test]
fn fork_response_queues_opposite_direction() {
    let src = "MOVI r1, 1\nMOVI r2, 1\nCMP r1, r2\nBEQ eq\nMOVI r3, 0xa\nHALT\neq: MOVI r3, 0xb\nHALT\n";
    let (mut sim, _) = toy32(src);
    sim.observe(Filter::kinds(&[EventKind::CBranch]), Box::new(FnObserver(|_: &Event| Response::Fork)));
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R3"), Some(0xb));
    let child = sim.forks.pop().unwrap();
    let mut c = sim.fork();
    c.restore(&child);
    c.run(&RunLimits::default()).unwrap();
    assert_eq!(c.reg("R3"), Some(0xa));
}

#[test]
fn observer_overrides_register_read_and_skips() {
    let src = "MOVI r1, 3\nMOVI r2, 4\nADD r1, r2\nHALT\n";
    let (mut sim, _) = toy32(src);
    sim.lift_options.optimize = false;
    let r2 = sim.spec.register("R2").unwrap();
    sim.observe(
        Filter::kinds(&[EventKind::RegisterRead]).registers(vec![r2]),
        Box::new(FnObserver(|_: &Event| Response::OverrideValue(100))),
    );
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R1"), Some(103));

    let (mut sim, _) = toy32(src);
    sim.lift_options.optimize = false;
    sim.observe(
        Filter::kinds(&[EventKind::ArchitecturalStep]).in_range(4, 8),
        Box::new(FnObserver(|_: &Event| Response::SkipInstruction)),
    );
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R1"), Some(3));
}

#[test]
fn replace_call_runs_handler() {
    let src = "CALL f\nHALT\nf: MOVI r1, 1\nRET\n";
    let (mut sim, _) = toy32(src);
    let r5 = sim.spec.register("R5").unwrap();
    sim.register_call_handler(1, Arc::new(move |m| m.state.write_reg(&r5, 0x55)));
    sim.observe(Filter::kinds(&[EventKind::Call]), Box::new(FnObserver(|_: &Event| Response::ReplaceCall(1))));
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!((sim.reg("R1"), sim.reg("R5")), (Some(0), Some(0x55)));
}

#[test]
fn panicking_observer_is_disabled() {
    let (mut sim, _) = toy32("MOVI r1, 3\nMOVI r2, 4\nHALT\n");
    let id = sim.observe(Filter::kinds(&[EventKind::ArchitecturalStep]), Box::new(FnObserver(|_: &Event| panic!("boom"))));
    sim.run(&RunLimits::default()).unwrap();
    assert!(!sim.observers.is_enabled(id));
    assert_eq!(sim.reg("R2"), Some(4));
}

// Flood exploration.

const DIAMONDS: &str = "
    MOVI r5, 0x1000
    LD r1, [r5, 0]
    MOVI r2, 0
    CMP r1, r2
    BEQ a1
    MOVI r3, 1
    JMP j1
a1: MOVI r3, 2
j1: LD r1, [r5, 4]
    CMP r1, r2
    BEQ a2
    MOVI r4, 1
    HALT
a2: MOVI r4, 2
    HALT
";

#[test]
fn flood_diamonds_k1_explores_four_paths() {
    let (mut sim, a) = sim_with(
        "toy32",
        DIAMONDS,
        Mode::Flood {
            k: 1,
            op_budget: 100_000,
            fill: FillPolicy::Zeros,
        },
    );
    let finals = Arc::new(Mutex::new(BTreeSet::new()));
    let f2 = finals.clone();
    let r4 = sim.spec.register("R4").unwrap();
    sim.observe(
        Filter::kinds(&[EventKind::RegisterWrite]).registers(vec![r4]),
        Box::new(FnObserver(move |e: &Event| {
            if let Event::RegisterWrite { value, .. } = *e {
                f2.lock().unwrap().insert(value);
            }
            Response::Continue
        })),
    );
    let report = sim.flood_explore(&[0]).unwrap();
    assert_eq!(report.paths, 4);
    let beq1 = a.symbol("a1").unwrap() - 12;
    let beq2 = a.symbol("a2").unwrap() - 12;
    let want: BTreeSet<_> = [(beq1, true), (beq1, false), (beq2, true), (beq2, false)].into();
    assert_eq!(report.visited, want);
    assert!(report.faults.is_empty());
    assert_eq!(*finals.lock().unwrap(), BTreeSet::from([1, 2]));
}

#[test]
fn flood_k1_loop_visits_each_direction_once() {
    let src = "MOVI r1, 0\nMOVI r2, 1\nMOVI r3, 10\nloop: ADD r1, r2\nCMP r1, r3\nBNE loop\nHALT\n";
    let (mut sim, _) = sim_with(
        "toy32",
        src,
        Mode::Flood {
            k: 1,
            op_budget: 100_000,
            fill: FillPolicy::Zeros,
        },
    );
    let report = sim.flood_explore(&[0]).unwrap();
    assert_eq!(report.max_visits, 1);
    assert_eq!(report.visited, BTreeSet::from([(20, true), (20, false)]));
    assert!(!report.budget_exhausted);
}

#[test]
fn flood_requires_flood_mode() {
    let (mut sim, _) = toy32("HALT\n");
    assert!(sim.flood_explore(&[0]).is_err());
}

#[test]
fn flood_budget_bounds_infinite_loop() {
    let (mut sim, _) = sim_with(
        "toy32",
        "loop: MOVI r1, 1\nJMP loop\n",
        Mode::Flood {
            k: 3,
            op_budget: 5_000,
            fill: FillPolicy::Zeros,
        },
    );
    let r = sim.flood_explore(&[0]).unwrap();
    assert!(r.budget_exhausted);
    assert!(r.ops <= 5_000 + 16);
}

// Intrinsics.

#[test]
fn dpp_override_uses_page_for_one_access() {
    let src = "
        MOVI r1, 0
        MOVDPP dpp0, r1
        MOVI r2, 0x10
        DPPOV 2
        LD r3, [r2]
        LD r4, [r2]
        HALT
    ";
    let (mut sim, _) = sim_with("toy16dpp", src, Mode::Concrete);
    sim.register_intrinsic("dppov", intrinsics::page_override(14, 1));
    sim.map(0x8000, 0x100);
    sim.state_mut().write_mem(0x10, 2, 0x1111);
    sim.state_mut().write_mem((2 << 14) | 0x10, 2, 0x2222);
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R3"), Some(0x2222));
    assert_eq!(sim.reg("R4"), Some(0x1111));
}

#[test]
fn unregistered_intrinsic_names_itself() {
    let (mut sim, _) = sim_with("toy16dpp", "DPPOV 1\nHALT\n", Mode::Concrete);
    let e = sim.run(&RunLimits::default()).unwrap_err();
    assert_eq!(e.to_string(), "no handler: dppov");
}

#[test]
fn custom_intrinsic_reads_arguments() {
    let (mut sim, _) = sim_with("toy16dpp", "DPPOV 3\nHALT\n", Mode::Concrete);
    let seen = Arc::new(Mutex::new(None));
    let s2 = seen.clone();
    sim.register_intrinsic(
        "dppov",
        Arc::new(move |ctx, args| {
            *s2.lock().unwrap() = Some((ctx.pc, args.to_vec()));
            Ok(None)
        }),
    );
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(*seen.lock().unwrap(), Some((0, vec![3])));
}

#[test]
fn ctx_write_swaps_register_banks() {
    let src = "
        MOVI r1, 0x11
        MOVI r2, 1
        MOVCTX r2
        MOVI r1, 0x22
        MOVI r3, 0
        MOVCTX r3
        HALT
    ";
    let (mut sim, _) = sim_with("toy16dpp", src, Mode::Concrete);
    let ctx = sim.spec.register("CTX").unwrap();
    let gprs = rehost::ir::VarNode::new(sim.spec.spaces.register(), 0, 0x20);
    sim.on_register_write(ctx, intrinsics::bank_switch(gprs));
    sim.run(&RunLimits::default()).unwrap();
    assert_eq!(sim.reg("R1"), Some(0x11));
    assert_eq!(sim.machine.banks.get(&1).map(|b| b[2..4].to_vec()), Some(vec![0, 0x22]));
}

// Concolic execution.

#[test]
fn concolic_records_and_negates_byte_compare() {
    let src = "
        MOVI r5, 0x1000
        LD r1, [r5, 0]
        MOVI r6, 0xff
        AND r1, r6
        MOVI r2, 0x41
        CMP r1, r2
        BEQ yes
        HALT
    yes: HALT
    ";
    let (mut sim, _) = sim_with("toy32", src, Mode::Concrete);
    sim.map(0x1000, 0x10);
    sim.state_mut().write_mem(0x1000, 1, 0x41);
    sim.set_mode(Mode::Concolic {
        regions: vec![(0x1000, 0x1001)],
    });
    sim.run(&RunLimits::default()).unwrap();
    let c = sim.concolic().unwrap();
    assert_eq!(c.path.len(), 1);
    assert!(c.path[0].taken);
    let var = c.inputs[0].0;
    let asg = [(var, 0x41)].into();
    assert!(c.path[0].constraint.holds(&asg).unwrap());
    match c.solve_flip(0, &SolveOptions::default()) {
        SolverResult::Sat(m) => assert_ne!(m[&var], 0x41),
        other => panic!("{:?}", other),
    }
}

#[test]
fn concolic_two_byte_compare_solves_to_constant() {
    let src = "
        MOVI r5, 0x1000
        LD r1, [r5, 0]
        MOVI r6, 0xffff
        AND r1, r6
        MOVI r2, 0xcaff
        CMP r1, r2
        BNE no
        HALT
    no: HALT
    ";
    let (mut sim, _) = sim_with("toy32", src, Mode::Concrete);
    sim.map(0x1000, 0x10);
    sim.set_mode(Mode::Concolic {
        regions: vec![(0x1000, 0x1002)],
    });
    sim.run(&RunLimits::default()).unwrap();
    let c = sim.concolic().unwrap().clone();
    assert_eq!(c.path.len(), 1);
    let SolverResult::Sat(m) = c.solve_flip(0, &SolveOptions::default()) else {
        panic!()
    };
    for pc in c.negate(0) {
        assert_eq!(eval(&pc.expr, &m), Ok(1));
    }
    let bytes = c.input_bytes(&m);
    assert_eq!(bytes, vec![(0x1000, 0xff), (0x1001, 0xca)]);
}

#[test]
fn concolic_without_regions_matches_concrete() {
    let src = "MOVI r1, 9\nMOVI r2, 3\nloop: SUB r1, r2\nBNE loop\nHALT\n";
    let (mut a, _) = toy32(src);
    let (mut b, _) = sim_with("toy32", src, Mode::Concolic { regions: vec![] });
    a.run(&RunLimits::default()).unwrap();
    b.run(&RunLimits::default()).unwrap();
    assert!(a.state().same_as(b.state()));
    assert!(b.concolic().unwrap().path.is_empty());
}
