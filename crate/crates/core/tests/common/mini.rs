//! Byte-level reference interpreter for straight-line blocks.

use std::collections::BTreeMap;

use rehost::archspec::ProcessorSpec;
use rehost::ir::{mask, IrBlock, Opcode, SpaceKind, VarNode};
use rehost::semantics::eval;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    pub regs: Vec<u8>,
    pub mem: BTreeMap<u64, u8>,
    pub effects: Vec<String>,
}

impl State {
    pub fn new(regs: Vec<u8>) -> State {
        State {
            regs,
            mem: BTreeMap::new(),
            effects: Vec::new(),
        }
    }
}

fn mem_byte(st: &State, a: u64) -> u8 {
    st.mem.get(&a).copied().unwrap_or((a.wrapping_mul(31).wrapping_add(7)) as u8)
}

fn get(spec: &ProcessorSpec, st: &State, temps: &[u8], vn: &VarNode) -> u64 {
    let bytes: &[u8] = match spec.spaces.kind(vn.space) {
        Some(SpaceKind::Register) => &st.regs,
        Some(SpaceKind::Temporary) => temps,
        _ => return vn.offset & mask(vn.size),
    };
    let b = &bytes[vn.offset as usize..vn.end() as usize];
    b.iter().rev().fold(0, |acc, &x| (acc << 8) | x as u64)
}

fn set(spec: &ProcessorSpec, st: &mut State, temps: &mut [u8], vn: &VarNode, v: u64) {
    let bytes: &mut [u8] = match spec.spaces.kind(vn.space) {
        Some(SpaceKind::Register) => &mut st.regs,
        Some(SpaceKind::Temporary) => temps,
        _ => panic!("write to non-storage"),
    };
    for i in 0..vn.size as usize {
        bytes[vn.offset as usize + i] = (v >> (8 * i)) as u8;
    }
}

pub fn run(spec: &ProcessorSpec, block: &IrBlock, mut st: State) -> State {
    for insn in &block.instructions {
        let next = insn.address + insn.length as u64;
        let mut temps = vec![0u8; 0x1000];
        set(spec, &mut st, &mut temps, &spec.pc, next);
        let mut i = 0;
        let mut steps = 0;
        while i < insn.ops.len() && steps < 2000 {
            steps += 1;
            let op = &insn.ops[i];
            i += 1;
            let arg = |st: &State, temps: &[u8], k: usize| get(spec, st, temps, &op.inputs[k]);
            let local = spec.spaces.kind(op.inputs.first().map(|v| v.space).unwrap_or(0)) == Some(SpaceKind::Constant);
            match op.opcode {
                Opcode::Load => {
                    let a = arg(&st, &temps, 1);
                    let o = op.output.unwrap();
                    let v = (0..o.size as u64).rev().fold(0, |acc, k| (acc << 8) | mem_byte(&st, a + k) as u64);
                    set(spec, &mut st, &mut temps, &o, v);
                }
                Opcode::Store => {
                    let (a, v) = (arg(&st, &temps, 1), arg(&st, &temps, 2));
                    for k in 0..op.inputs[2].size as u64 {
                        st.mem.insert(a + k, (v >> (8 * k)) as u8);
                    }
                    st.effects.push(format!("store {:x} {:x}", a, v));
                }
                Opcode::Branch if local => i = op.inputs[0].offset as usize,
                Opcode::CBranch if local => {
                    if arg(&st, &temps, 1) != 0 {
                        i = op.inputs[0].offset as usize;
                    }
                }
                Opcode::CBranch => {
                    if arg(&st, &temps, 1) != 0 {
                        st.effects.push(format!("cbranch {:x}", op.inputs[0].offset));
                        return st;
                    }
                }
                Opcode::Branch | Opcode::Call => {
                    st.effects.push(format!("{} {:x}", op.opcode, op.inputs[0].offset));
                    return st;
                }
                Opcode::IBranch | Opcode::ICall | Opcode::Return => {
                    st.effects.push(format!("{} {:x}", op.opcode, arg(&st, &temps, 0)));
                    return st;
                }
                Opcode::Halt => {
                    st.effects.push("halt".into());
                    return st;
                }
                Opcode::Intrinsic => {
                    let args: Vec<u64> = (0..op.inputs.len()).map(|k| arg(&st, &temps, k)).collect();
                    st.effects.push(format!("{} {:?}", op.intrinsic.as_deref().unwrap_or(""), args));
                    if let Some(o) = op.output {
                        set(spec, &mut st, &mut temps, &o, 0);
                    }
                }
                _ => {
                    let args: Vec<u64> = (0..op.inputs.len()).map(|k| arg(&st, &temps, k)).collect();
                    let o = op.output.unwrap();
                    let v = eval(op.opcode, &args, op.inputs[0].size, o.size).unwrap();
                    set(spec, &mut st, &mut temps, &o, v);
                }
            }
        }
    }
    st
}
