mod common;

use std::sync::Arc;

use common::*;
use rehost::exec::{Mode, RunLimits, Simulator, StopReason};
use rehost::interrupts::{Dispatch, InterruptController, InterruptError, InterruptSpec, ReturnTrigger, SaveItem, Vector};
use rehost::periph::UniversalPeripheral;

const SENTINEL: u64 = 0xfffffff0;
const WINDOW: u64 = 0xfff84000;

fn irq(sim: &Simulator, id: u32, priority: u32, vector: u64) -> InterruptSpec {
    let r = |n: &str| SaveItem::Register(sim.spec.register(n).unwrap());
    InterruptSpec {
        id,
        priority,
        vector: Vector::Address(vector),
        save: vec![r("SR"), SaveItem::Pc, r("R15"), r("R1"), r("R2"), r("R3")],
        trigger: ReturnTrigger::Sentinel {
            address: SENTINEL,
            link: sim.spec.register("R15").unwrap(),
        },
    }
}

fn install(sim: &mut Simulator, specs: Vec<InterruptSpec>) {
    let mut ctl = InterruptController::new(specs.clone()).unwrap();
    ctl.window = Some(WINDOW);
    for s in &specs {
        ctl.set_enabled(s.id, true).unwrap();
    }
    sim.set_interrupts(ctl);
}

/// Main loop counts in r4; each ISR appends its marker to a log at 0x8100.
const LOGGING: &str = "
    MOVI r1, 0x8100
    MOVI r2, 0x80fc
    ST [r2, 0], r1
    MOVI r4, 0
    MOVI r5, 1
main:
    ADD r4, r5
    MOVI r6, 400
    CMP r4, r6
    BNE main
    HALT

.macro log marker
    MOVI r2, 0x80fc
    LD r1, [r2, 0]
    MOVI r3, \\marker
    ST [r1, 0], r3
    MOVI r3, 4
    ADD r1, r3
    ST [r2, 0], r1
.endm

low:
    log 0x10
    MOVI r1, 0xfff8
    MOVI r2, 16
    SHL r1, r2
    MOVI r2, 0x4108
    OR r1, r2
    MOVI r2, 2
    ST [r1, 0], r2
    log 0x11
    RET
high:
    log 0x20
    MOVI r1, 0xfff8
    MOVI r2, 16
    SHL r1, r2
    MOVI r2, 0x410c
    OR r1, r2
    LD r3, [r1, 0]
    MOVI r2, 0x80fc
    LD r1, [r2, 0]
    ST [r1, 0], r3
    MOVI r3, 4
    ADD r1, r3
    ST [r2, 0], r1
    RET
";

fn log(sim: &Simulator) -> Vec<u64> {
    let end = sim.state().read_mem(0x80fc, 4).unwrap();
    (0x8100..end).step_by(4).map(|a| sim.state().read_mem(a, 4).unwrap()).collect()
}

fn logging_sim() -> (Simulator, rehost::asm::Assembly) {
    let (mut sim, a) = source("toy32", LOGGING);
    sim.map(0x8000, 0x1000);
    let specs = vec![irq(&sim, 1, 2, a.symbol("low").unwrap()), irq(&sim, 2, 1, a.symbol("high").unwrap())];
    install(&mut sim, specs);
    (sim, a)
}

#[test]
fn nested_interrupts_unwind_lifo() {
    let (mut sim, _) = logging_sim();
    sim.run(&RunLimits::default().until(24)).unwrap();
    sim.interrupts_mut().unwrap().raise(1).unwrap();
    assert_eq!(sim.run(&RunLimits::ops(100_000)).unwrap(), StopReason::Halted);
    assert_eq!(log(&sim), vec![0x10, 0x20, 2, 0x11]);
    assert_eq!(sim.interrupts().unwrap().depth(), 0);
    assert_eq!(sim.reg("R4"), Some(400));
}

#[test]
fn priority_orders_simultaneous_requests() {
    let (mut sim, _) = logging_sim();
    sim.run(&RunLimits::default().until(24)).unwrap();
    let ctl = sim.interrupts_mut().unwrap();
    ctl.raise(1).unwrap();
    ctl.raise(2).unwrap();
    sim.run(&RunLimits::ops(100_000)).unwrap();
    assert_eq!(log(&sim), vec![0x20, 1, 0x10, 0x20, 2, 0x11]);
}

#[test]
fn raise_while_disabled_stays_pending() {
    let (mut sim, _) = logging_sim();
    sim.run(&RunLimits::default().until(24)).unwrap();
    let ctl = sim.interrupts_mut().unwrap();
    ctl.set_enabled(2, false).unwrap();
    ctl.raise(2).unwrap();
    sim.run(&RunLimits {
        insn_budget: Some(50),
        ..RunLimits::default()
    })
    .unwrap();
    assert!(log(&sim).is_empty());
    assert!(sim.interrupts().unwrap().is_pending(2));
    sim.interrupts_mut().unwrap().set_enabled(2, true).unwrap();
    sim.run(&RunLimits::ops(100_000)).unwrap();
    assert_eq!(log(&sim), vec![0x20, 1]);
}

#[test]
fn repeated_raises_coalesce() {
    let (mut sim, _) = logging_sim();
    sim.run(&RunLimits::default().until(24)).unwrap();
    for _ in 0..5 {
        sim.interrupts_mut().unwrap().raise(2).unwrap();
    }
    sim.run(&RunLimits::ops(100_000)).unwrap();
    assert_eq!(log(&sim), vec![0x20, 1]);
    assert_eq!(sim.interrupts().unwrap().dispatched, 1);
}

#[test]
fn return_restores_saved_context() {
    let src = "
        MOVI r1, 5
        MOVI r2, 5
        CMP r1, r2
    spin:
        JMP spin
    isr:
        MOVI r1, 1
        MOVI r2, 2
        CMP r1, r2
        RET
    ";
    let (mut sim, a) = source("toy32", src);
    let spec = irq(&sim, 1, 1, a.symbol("isr").unwrap());
    install(&mut sim, vec![spec]);
    sim.run(&RunLimits::default().until(12)).unwrap();
    let before = (sim.reg("SR"), sim.reg("R1"), sim.reg("R2"), sim.reg("R15"));
    assert_eq!(sim.reg("ZF"), Some(1));
    sim.interrupts_mut().unwrap().raise(1).unwrap();
    sim.step_instruction().unwrap();
    assert_eq!(sim.reg("R15"), Some(SENTINEL));
    sim.run(&RunLimits {
        insn_budget: Some(4),
        ..RunLimits::default()
    })
    .unwrap();
    assert_eq!(sim.pc(), 12);
    assert_eq!((sim.reg("SR"), sim.reg("R1"), sim.reg("R2"), sim.reg("R15")), before);
}

#[test]
fn handler_vector_runs_framework_code() {
    let (mut sim, _) = source("toy32", "loop: JMP loop\n");
    let r7 = sim.spec.register("R7").unwrap();
    sim.register_call_handler(9, Arc::new(move |m| m.state.write_reg(&r7, 0x77)));
    let spec = InterruptSpec {
        id: 3,
        priority: 0,
        vector: Vector::Handler(9),
        save: vec![],
        trigger: ReturnTrigger::Intrinsic("reti".into()),
    };
    install(&mut sim, vec![spec]);
    sim.interrupts_mut().unwrap().raise(3).unwrap();
    sim.step_instruction().unwrap();
    assert_eq!(sim.reg("R7"), Some(0x77));
    assert_eq!(sim.interrupts().unwrap().depth(), 0);
}

#[test]
fn controller_errors() {
    let (sim, _) = source("toy32", "HALT\n");
    let mut ctl = InterruptController::new(vec![irq(&sim, 1, 1, 0x40)]).unwrap();
    let mut st = sim.state().clone();
    assert_eq!(ctl.return_from_interrupt(&mut st), Err(InterruptError::Underflow));
    assert_eq!(ctl.raise(8), Err(InterruptError::UnknownId(8)));
    assert_eq!(ctl.dispatch_pending(&mut sim.state().clone()), None);
    assert!(InterruptController::new(vec![irq(&sim, 1, 1, 0), irq(&sim, 1, 2, 0)]).is_err());
    let mut empty = irq(&sim, 1, 1, 0);
    empty.save.clear();
    assert!(InterruptController::new(vec![empty]).is_err());
    let mut no_link = irq(&sim, 1, 1, 0);
    no_link.save.retain(|s| *s != SaveItem::Register(sim.spec.register("R15").unwrap()));
    assert!(InterruptController::new(vec![no_link]).is_err());
}

#[test]
fn dispatch_reports_vector() {
    let (sim, _) = source("toy32", "HALT\n");
    let mut ctl = InterruptController::new(vec![irq(&sim, 4, 1, 0x40)]).unwrap();
    ctl.set_enabled(4, true).unwrap();
    ctl.raise(4).unwrap();
    let mut st = sim.state().clone();
    assert_eq!(ctl.dispatch_pending(&mut st), Some(Dispatch::Vectored { id: 4, vector: 0x40 }));
    assert_eq!(st.pc, 0x40);
    assert_eq!(ctl.depth(), 1);
}

fn rtos(name: &str, with_irq: bool) -> (Simulator, rehost::asm::Assembly) {
    let (mut sim, a) = boot(name, Mode::Concrete);
    sim.add_device(Box::new(UniversalPeripheral::cmt("cmt", 0xfff82000, Some(1)))).unwrap();
    if with_irq {
        let spec = irq(&sim, 1, 1, a.symbol("isr").unwrap());
        install(&mut sim, vec![spec]);
    }
    (sim, a)
}

#[test]
fn rtos_switches_tasks() {
    let (mut sim, _) = rtos("rtos", true);
    let r = sim
        .run(&RunLimits {
            insn_budget: Some(100_000),
            ..RunLimits::default()
        })
        .unwrap();
    assert_eq!(r, StopReason::InstructionBudget);
    let switches = sim.state().read_mem(0x8004, 4).unwrap();
    let (a, b) = (sim.state().read_mem(0x8010, 4).unwrap(), sim.state().read_mem(0x8014, 4).unwrap());
    assert!(switches >= 10, "{} switches", switches);
    assert!(a > 1000 && b > 1000, "{} {}", a, b);
    assert!(a.abs_diff(b) < a / 4);
}

#[test]
fn effect_free_isr_leaves_state_unchanged() {
    let (mut with, _) = rtos("rtos_idle", true);
    let (mut without, _) = rtos("rtos_idle", false);
    assert_eq!(with.run(&RunLimits::ops(5_000_000)).unwrap(), StopReason::Halted);
    assert_eq!(without.run(&RunLimits::ops(5_000_000)).unwrap(), StopReason::Halted);
    assert!(with.interrupts().unwrap().dispatched > 100);
    assert!(with.state().same_as(without.state()));
}
