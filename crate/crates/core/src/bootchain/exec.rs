use serde::{Deserialize, Serialize};

use super::isa::{decode_instruction, Instruction};
use crate::hw::{HookAction, MemoryMap, ShaEngine};

/// How a run of the micro-executor ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecOutcome {
    PayloadExecuted { hook_id: String, captured: Vec<u8> },
    /// `word` is `None` when the fetch itself faulted (unmapped pc).
    Crash { pc: u32, word: Option<u32> },
    Hang { steps: u64 },
}

/// Steps from `start_pc`, following unconditional branches and NOPs until a
/// payload hook runs, an instruction can't be decoded, or `step_limit`
/// instructions have executed.
pub fn micro_exec(memory: &MemoryMap, sha: &ShaEngine, start_pc: u32, step_limit: u64) -> ExecOutcome {
    let mut pc = start_pc;
    for _ in 0..step_limit {
        if let Some(hook) = memory.armed_hook_at(pc) {
            let captured = match hook.action {
                HookAction::DumpShaHash => sha.read_latch().map(|d| d.to_vec()).unwrap_or_default(),
                HookAction::Marker => Vec::new(),
            };
            return ExecOutcome::PayloadExecuted {
                hook_id: hook.id.clone(),
                captured,
            };
        }
        let Ok(word) = memory.read_u32(pc) else {
            return ExecOutcome::Crash { pc, word: None };
        };
        match decode_instruction(word, pc) {
            Instruction::Branch { target } => pc = target,
            Instruction::Nop => pc = pc.wrapping_add(4),
            Instruction::Undecodable { word } => {
                return ExecOutcome::Crash {
                    pc,
                    word: Some(word),
                }
            }
        }
    }
    ExecOutcome::Hang { steps: step_limit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootchain::isa::{encode_branch, NOP};
    use crate::hw::Hook;

    const START: u32 = 0x0810_0000;

    #[test]
    fn nop_sled_reaches_payload() {
        let mut mem = MemoryMap::default();
        let mut sha = ShaEngine::default();
        let digest = sha.compute_and_latch(b"otp");
        for i in 0..64 {
            mem.write_u32(START + 4 * i, NOP).unwrap();
        }
        let payload_at = START + 64 * 4;
        let payload = [0x10, 0x20, 0x30, 0x40];
        mem.write(payload_at, &payload).unwrap();
        mem.add_hook(Hook::for_payload("dump", payload_at, &payload, HookAction::DumpShaHash))
            .unwrap();
        assert_eq!(
            micro_exec(&mem, &sha, START, 1_000_000),
            ExecOutcome::PayloadExecuted {
                hook_id: "dump".into(),
                captured: digest.to_vec()
            }
        );
    }

    #[test]
    fn zero_word_crashes_at_entry() {
        let mem = MemoryMap::default();
        assert_eq!(
            micro_exec(&mem, &ShaEngine::default(), START, 10),
            ExecOutcome::Crash {
                pc: START,
                word: Some(0)
            }
        );
    }

    #[test]
    fn branch_to_self_hangs() {
        let mut mem = MemoryMap::default();
        mem.write_u32(START, encode_branch(START, START).unwrap()).unwrap();
        assert_eq!(
            micro_exec(&mem, &ShaEngine::default(), START, 1_000),
            ExecOutcome::Hang { steps: 1_000 }
        );
    }

    #[test]
    fn branch_out_of_ram_faults() {
        let mut mem = MemoryMap::default();
        let target = 0x0700_0000;
        mem.write_u32(START, encode_branch(START, target).unwrap()).unwrap();
        assert_eq!(
            micro_exec(&mem, &ShaEngine::default(), START, 10),
            ExecOutcome::Crash {
                pc: target,
                word: None
            }
        );
    }
}
