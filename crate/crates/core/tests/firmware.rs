mod common;

use common::*;
use rehost::exec::{Mode, RunLimits, StopReason};
use rehost::periph::SerialPort;

const TOY32: [&str; 10] = [
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

#[test]
fn all_sources_assemble() {
    for name in TOY32 {
        let a = firmware("toy32", name);
        assert!(!a.bytes.is_empty(), "{}", name);
    }
    assert!(!firmware("toy16dpp", "dpp").bytes.is_empty());
}

#[test]
fn hello_prints_greeting() {
    let (mut sim, _) = boot("hello", Mode::Concrete);
    sim.add_device(Box::new(SerialPort::new("uart", 0xfff80000))).unwrap();
    assert_eq!(sim.run(&RunLimits::ops(100_000)).unwrap(), StopReason::Halted);
    assert_eq!(sim.device::<SerialPort>("uart").unwrap().transcript, b"Hello, world!\n");
}

fn with_uart(name: &str, input: &[u8]) -> rehost::exec::Simulator {
    let (mut sim, _) = boot(name, Mode::Concrete);
    let mut uart = SerialPort::new("uart", 0xfff80000);
    uart.feed(input);
    sim.add_device(Box::new(uart)).unwrap();
    sim
}

#[test]
fn backdoor_accepts_only_the_key() {
    for (input, reply) in [(&b"\x27\xca\xff\xe0\x12"[..], b"+"), (b"\x27\xca\xff\xe0\x13", b"-"), (b"", b"-")] {
        let mut sim = with_uart("backdoor", input);
        assert_eq!(sim.run(&RunLimits::ops(100_000)).unwrap(), StopReason::Halted);
        assert_eq!(sim.device::<SerialPort>("uart").unwrap().transcript, reply, "{:x?}", input);
    }
}

#[test]
fn overflow_reaches_red_zone_only_past_62_bytes() {
    use rehost::periph::RedZone;
    for (len, hit) in [(0, false), (10, false), (62, false), (63, true), (100, true)] {
        let mut sim = with_uart("overflow", &vec![b'A'; len]);
        let rz = RedZone::new(0x9040, 0x9080);
        let id = sim.observe(rz.filter(), Box::new(rz));
        assert_eq!(sim.run(&RunLimits::ops(1_000_000)).unwrap(), StopReason::Halted);
        assert_eq!(!sim.observer::<RedZone>(id).unwrap().hits.is_empty(), hit, "len {}", len);
        let tail = sim.state().read_bytes(0x9000 + len as u64, 2).unwrap();
        assert_eq!(tail, vec![0x0d, 0x0a]);
    }
}

fn canids_sim(mode: Mode) -> rehost::exec::Simulator {
    use rehost::periph::FifoStream;
    let (mut sim, _) = boot("canids", mode);
    sim.add_device(Box::new(FifoStream::new("can", 0xfff83000, 31))).unwrap();
    sim
}

fn tx_ids(sim: &mut rehost::exec::Simulator) -> std::sync::Arc<std::sync::Mutex<std::collections::BTreeSet<u64>>> {
    use rehost::observe::{Event, EventKind, Filter, FnObserver, Response};
    let ids = std::sync::Arc::new(std::sync::Mutex::new(std::collections::BTreeSet::new()));
    let i2 = ids.clone();
    let tx_id = 0xfff83000 + rehost::periph::fifo_regs::TX_ID;
    sim.observe(
        Filter::kinds(&[EventKind::MemoryWrite]).in_range(tx_id, tx_id + 4),
        Box::new(FnObserver(move |e: &Event| {
            if let Event::MemoryWrite { value, .. } = *e {
                i2.lock().unwrap().insert(value);
            }
            Response::Continue
        })),
    );
    ids
}

/// Every request a transport could deliver: all first two bytes of the buffer.
fn canids_oracle() -> std::collections::BTreeSet<u64> {
    let mut sim = canids_sim(Mode::Concrete);
    let ids = tx_ids(&mut sim);
    let base = sim.snapshot();
    for b0 in 0..=255u8 {
        for b1 in 0..=255u8 {
            sim.restore(&base);
            sim.state_mut().write_bytes(0x9000, &[b0, b1]);
            assert_eq!(sim.run(&RunLimits::ops(10_000)).unwrap(), StopReason::Halted);
        }
    }
    let out = ids.lock().unwrap().clone();
    out
}

#[test]
fn canids_flood_recovers_identifiers() {
    use rehost::exec::FillPolicy;
    let mut sim = canids_sim(Mode::Flood {
        k: 3,
        op_budget: 1_000_000,
        fill: FillPolicy::Zeros,
    });
    let ids = tx_ids(&mut sim);
    let report = sim.flood_explore(&[0]).unwrap();
    assert!(!report.budget_exhausted);
    let found = ids.lock().unwrap().clone();
    assert_eq!(found, [0x7df, 0x700, 0x18db33f1].into());
    assert_eq!(found, canids_oracle());
}

#[test]
fn bundled_images_match_sources() {
    let all = TOY32.iter().map(|n| ("toy32", *n)).chain([("toy16dpp", "dpp")]);
    for (isa, name) in all {
        let a = firmware(isa, name);
        let bin = std::fs::read(root().join(format!("fw/{}.bin", name))).unwrap();
        assert_eq!(bin, a.bytes, "fw/{}.bin is stale", name);
        let sym = std::fs::read_to_string(root().join(format!("fw/{}.sym", name))).unwrap();
        assert_eq!(sym, a.symbol_listing(), "fw/{}.sym is stale", name);
    }
}
