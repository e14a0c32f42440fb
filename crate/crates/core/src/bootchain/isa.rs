//! The sliver of the ARM (A32) instruction set the micro-executor needs.
//!
//! An unconditional `B` is `cond=1110 | 101 | L=0 | imm24`, so every word with
//! top byte `0xEA` is one. The target is `pc + 8 + sign_extend(imm24) * 4`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `mov r0, r0`
pub const NOP: u32 = 0xE1A0_0000;

const BRANCH_AL: u32 = 0xEA00_0000;
const IMM24_MASK: u32 = 0x00FF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instruction {
    Branch { target: u32 },
    Nop,
    Undecodable { word: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("branch from {pc:#010x} to {target:#010x} does not fit in 24 bits")]
    DisplacementOutOfRange { pc: u32, target: u32 },
    #[error("branch addresses must be word aligned")]
    Misaligned,
}

pub fn is_branch(word: u32) -> bool {
    word >> 24 == BRANCH_AL >> 24
}

pub fn decode_instruction(word: u32, pc: u32) -> Instruction {
    if word == NOP {
        Instruction::Nop
    } else if is_branch(word) {
        // shift imm24 into the top bits, then arithmetic-shift back down by
        // 6: sign extension and the *4 scaling in one go
        let offset = (((word & IMM24_MASK) << 8) as i32) >> 6;
        Instruction::Branch {
            target: pc.wrapping_add(8).wrapping_add(offset as u32),
        }
    } else {
        Instruction::Undecodable { word }
    }
}

pub fn encode_branch(pc: u32, target: u32) -> Result<u32, EncodeError> {
    if !pc.is_multiple_of(4) || !target.is_multiple_of(4) {
        return Err(EncodeError::Misaligned);
    }
    let disp = (target as i64 - pc as i64 - 8) / 4;
    if !(-(1 << 23)..(1 << 23)).contains(&disp) {
        return Err(EncodeError::DisplacementOutOfRange { pc, target });
    }
    Ok(BRANCH_AL | (disp as u32 & IMM24_MASK))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent bit-level cross-check, written against the field layout
    /// rather than the shift trick used above.
    fn reference_target(word: u32, pc: u32) -> Option<u32> {
        let cond = word >> 28;
        let op = (word >> 25) & 0b111;
        let link = (word >> 24) & 1;
        if cond != 0b1110 || op != 0b101 || link != 0 {
            return None;
        }
        let imm = (word & 0x00ff_ffff) as i64;
        let signed = if imm & 0x0080_0000 != 0 { imm - (1 << 24) } else { imm };
        Some((pc as i64 + 8 + signed * 4) as u32)
    }

    #[test]
    fn branch_to_self() {
        assert_eq!(
            decode_instruction(0xEAFF_FFFE, 0x0800_0000),
            Instruction::Branch { target: 0x0800_0000 }
        );
    }

    #[test]
    fn nop() {
        assert_eq!(decode_instruction(NOP, 0x1234_5678), Instruction::Nop);
    }

    #[test]
    fn far_forward_branch() {
        let word = 0xEA03_F3FC;
        assert_eq!(reference_target(word, 0x0800_0100), Some(0x080F_D0F8));
        assert_eq!(
            decode_instruction(word, 0x0800_0100),
            Instruction::Branch { target: 0x080F_D0F8 }
        );
    }

    #[test]
    fn other_words_undecodable() {
        for w in [0u32, 0xEB00_0000, 0x0A00_0000, 0xE12F_FF1E, 0xFFFF_FFFF] {
            assert_eq!(decode_instruction(w, 0), Instruction::Undecodable { word: w });
        }
    }

    #[test]
    fn encode_zero_displacement() {
        assert_eq!(encode_branch(0x0800_0000, 0x0800_0008), Ok(0xEA00_0000));
    }

    #[test]
    fn encode_limits() {
        let pc = 0x0800_0000;
        let max = pc + 8 + ((1 << 23) - 1) * 4;
        assert!(encode_branch(pc, max).is_ok());
        assert!(matches!(
            encode_branch(pc, max + 4),
            Err(EncodeError::DisplacementOutOfRange { .. })
        ));
        let min = pc + 8 - (1 << 23) * 4;
        assert!(encode_branch(pc, min).is_ok());
        assert!(encode_branch(pc, min - 4).is_err());
        assert_eq!(encode_branch(pc, pc + 2), Err(EncodeError::Misaligned));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decode_encode_identity(pc in (0x0300_0000u32..0xF000_0000).prop_map(|p| p & !3),
                                  disp in -(1i64 << 23)..(1i64 << 23)) {
            let target = (pc as i64 + 8 + disp * 4) as u32;
            let word = encode_branch(pc, target).unwrap();
            prop_assert_eq!(decode_instruction(word, pc), Instruction::Branch { target });
        }

        #[test]
        fn decode_agrees_with_reference(word in any::<u32>(), pc in any::<u32>().prop_map(|p| p & !3)) {
            match decode_instruction(word, pc) {
                Instruction::Branch { target } => prop_assert_eq!(reference_target(word, pc), Some(target)),
                Instruction::Nop => prop_assert_eq!(word, NOP),
                Instruction::Undecodable { .. } => prop_assert_eq!(reference_target(word, pc), None),
            }
        }
    }
}
