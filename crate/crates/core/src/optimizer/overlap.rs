//! Overlap classes: maximal groups of varnodes whose byte intervals intersect.

use crate::archspec::Endian;
use crate::ir::{valid_size, VarNode};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapClass {
    /// Varnode covering every member.
    pub rep: VarNode,
    pub members: Vec<VarNode>,
}

#[derive(Clone, Debug)]
pub struct Overlap {
    pub classes: Vec<OverlapClass>,
    endian: Endian,
}

impl Overlap {
    /// Groups varnodes into classes. Fails when a class is not a valid
    /// operand width, which the value model cannot express.
    pub fn build(vns: impl IntoIterator<Item = VarNode>, endian: Endian) -> Result<Overlap, String> {
        let mut all: Vec<VarNode> = vns.into_iter().collect();
        all.sort_by_key(|v| (v.space, v.offset, std::cmp::Reverse(v.size)));
        all.dedup();
        let mut classes: Vec<OverlapClass> = Vec::new();
        for vn in all {
            match classes.last_mut() {
                Some(c) if c.rep.space == vn.space && vn.offset < c.rep.end() => {
                    let end = c.rep.end().max(vn.end());
                    c.rep.size = (end - c.rep.offset) as u8;
                    c.members.push(vn);
                }
                _ => classes.push(OverlapClass { rep: vn, members: vec![vn] }),
            }
        }
        for c in &classes {
            if !valid_size(c.rep.size) {
                return Err(format!("overlap class at 0x{:x} spans {} bytes", c.rep.offset, c.rep.size));
            }
        }
        Ok(Overlap { classes, endian })
    }

    pub fn class_of(&self, vn: &VarNode) -> Option<usize> {
        let i = self.classes.partition_point(|c| (c.rep.space, c.rep.end()) <= (vn.space, vn.offset));
        let c = self.classes.get(i)?;
        c.rep.contains(vn).then_some(i)
    }

    /// Bit position of `vn`'s value inside its class value.
    pub fn shift(&self, class: usize, vn: &VarNode) -> u32 {
        let rep = self.classes[class].rep;
        let bytes = match self.endian {
            Endian::Little => vn.offset - rep.offset,
            Endian::Big => rep.end() - vn.end(),
        };
        bytes as u32 * 8
    }
}
