//! A desk-scale model of a two-stage console secure boot chain, and the
//! toolkit that breaks it by shuffling ECB-encrypted keysector blocks.
//!
//! The usual entry point is [`vendor::Vendor`], which signs firmware and
//! manufactures [`console::Console`]s; [`attacks`] then works against a
//! console through the same handles a post-boot attacker would have.

pub mod attacks;
pub mod bootchain;
pub mod console;
pub mod crypto;
pub mod firm;
pub mod hw;
pub mod nand;
pub mod vendor;

#[cfg(test)]
mod testutil;

pub use attacks::AttackError;
pub use bootchain::{BootOutcome, BootReport};
pub use console::{Console, RebootMode};
pub use firm::{FirmImage, LoaderVariant};
pub use nand::{FirmSlot, NandImage};
pub use vendor::Vendor;

// The guide's snippets run as doctests so they cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/boot-chain.md")]
    mod boot_chain {}
    #[doc = include_str!("../../../book/src/keysector.md")]
    mod keysector {}
    #[doc = include_str!("../../../book/src/branches.md")]
    mod branches {}
    #[doc = include_str!("../../../book/src/stage1.md")]
    mod stage1 {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
